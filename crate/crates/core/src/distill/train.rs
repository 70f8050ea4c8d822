use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{ovs_batch, TrainBatch};
use super::loss::{normalize_rows, normalize_rows_backward, render_loss, render_loss_grad, vdc_loss, vdc_loss_grad};
use super::probe::ProbeSet;
use super::DistillConfig;
use crate::encoding::{encode_rays, EncodingConfig, PathSampling};
use crate::error::{NerdfError, Result};
use crate::field::TeacherField;
use crate::geometry::{DepthRange, PoseRegion};
use crate::nerdf::fourier::{decode_rows, decode_rows_backward};
use crate::nerdf::model::{Head, RayModel, RenderConfig};
use crate::nerdf::volume::{composite_rows, composite_rows_backward};
use crate::nn::{adam_step, mlp_backward, mlp_forward, AdamState, MlpGrads};
use crate::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub render_loss: f64,
    pub vdc_loss: f64,
    pub total: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillMetrics {
    pub iteration: u64,
    pub render_loss: f64,
    pub vdc_loss: f64,
    pub total: f64,
    pub psnr_probe: f64,
}

pub enum Progress<'a> {
    Metrics(&'a DistillMetrics),
    Checkpoint { iteration: u64, model: &'a RayModel<f32> },
}

/// Supervision for one batch: colours, and normalised teacher densities
/// when the density constraint is active.
pub struct Targets<'a, T> {
    pub rgb: ArrayView2<'a, T>,
    pub density: Option<ArrayView2<'a, T>>,
    pub lambda: f64,
}

struct Forward<T> {
    metrics: StepMetrics,
    out: Array2<T>,
    grad_out: Array2<T>,
}

fn forward_loss<T: Scalar>(model: &RayModel<T>, out: Array2<T>, targets: &Targets<'_, T>) -> Result<Forward<T>> {
    match model.head {
        Head::Rgb => {
            let rgb = out.mapv(sigmoid);
            let render = render_loss(rgb.view(), targets.rgb)?;
            let g = render_loss_grad(rgb.view(), targets.rgb);
            let grad_out = &g * &rgb.mapv(|c| c * (T::one() - c));
            let render = render.f64();
            Ok(Forward {
                metrics: StepMetrics {
                    render_loss: render,
                    vdc_loss: 0.0,
                    total: render,
                },
                out,
                grad_out,
            })
        }
        Head::Distribution => {
            let basis = model.basis();
            let deltas = model.deltas();
            let d = decode_rows(out.view(), &basis)?;
            let cv = [d.color[0].view(), d.color[1].view(), d.color[2].view()];
            let (rgb, weights) = composite_rows(d.sigma.view(), cv, &deltas);
            let render = render_loss(rgb.view(), targets.rgb)?.f64();
            let g_rgb = render_loss_grad(rgb.view(), targets.rgb);
            let (mut g_sigma, g_color) =
                composite_rows_backward(d.sigma.view(), cv, &deltas, weights.view(), g_rgb.view());
            let mut vdc = 0.0;
            if let Some(teacher) = targets.density {
                let n = normalize_rows(d.sigma.view());
                vdc = vdc_loss(n.view(), teacher, targets.lambda)?.f64();
                let g_n = vdc_loss_grad(n.view(), teacher, targets.lambda);
                g_sigma += &normalize_rows_backward(d.sigma.view(), n.view(), g_n.view());
            }
            let grad_out = decode_rows_backward(&d, &basis, &g_sigma, &g_color);
            Ok(Forward {
                metrics: StepMetrics {
                    render_loss: render,
                    vdc_loss: vdc,
                    total: render + vdc,
                },
                out,
                grad_out,
            })
        }
    }
}

/// Composite objective and its exact parameter gradients for encoded rays `x`.
pub fn loss_and_grads<T: Scalar>(
    model: &RayModel<T>,
    x: ArrayView2<'_, T>,
    targets: &Targets<'_, T>,
) -> Result<(StepMetrics, MlpGrads<T>)> {
    let (out, tape) = mlp_forward(&model.params, x, true)?;
    let f = forward_loss(model, out, targets)?;
    debug_assert_eq!(f.out.dim(), f.grad_out.dim());
    let tape = tape.expect("recording forward returns a tape");
    let (grads, _) = mlp_backward(&model.params, tape, f.grad_out.view(), false)?;
    Ok((f.metrics, grads))
}

/// The objective alone, without recording (finite-difference oracle).
pub fn loss_value<T: Scalar>(model: &RayModel<T>, x: ArrayView2<'_, T>, targets: &Targets<'_, T>) -> Result<StepMetrics> {
    let (out, _) = mlp_forward(&model.params, x, false)?;
    Ok(forward_loss(model, out, targets)?.metrics)
}

/// Per-iteration generator: the same `(seed, iteration)` always yields the
/// same batch, whatever the loss configuration.
pub fn iteration_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration + 1);
    rng
}

fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Encode with fresh stratified path points, evaluate the composite loss, one
/// Adam update.
pub fn distill_step(
    model: &mut RayModel<f32>,
    batch: &TrainBatch,
    opt: &mut AdamState<f32>,
    cfg: &DistillConfig,
    rng: &mut ChaCha8Rng,
    iteration: u64,
) -> Result<StepMetrics> {
    let x = encode_rays::<f32, _>(&batch.rays, &model.encoding, &mut PathSampling::Stratified(rng))?;
    let use_vdc = cfg.enable_vdc && model.head == Head::Distribution;
    let teacher_density = use_vdc.then(|| normalize_rows(batch.sigma.view()));
    let targets = Targets {
        rgb: batch.rgb.view(),
        density: teacher_density.as_ref().map(|d| d.view()),
        lambda: cfg.lambda_vdc,
    };
    let diverged = |detail: String| NerdfError::Divergence {
        iteration,
        batch_seed: cfg.seed,
        detail,
    };
    let (metrics, grads) = loss_and_grads(model, x.view(), &targets)?;
    if !metrics.total.is_finite() {
        return Err(diverged(format!(
            "loss is {} (render {}, density {})",
            metrics.total, metrics.render_loss, metrics.vdc_loss
        )));
    }
    adam_step(&mut model.params, &grads, opt).map_err(|e| match e {
        NerdfError::Divergence { detail, .. } => diverged(detail),
        other => other,
    })?;
    Ok(metrics)
}

/// Static inputs of a distillation run.
pub struct DistillSetup<'a> {
    pub teacher: &'a TeacherField,
    pub region: &'a PoseRegion,
    pub depth: DepthRange,
    pub encoding: EncodingConfig,
    pub render: RenderConfig,
    pub probe: &'a ProbeSet,
}

pub fn new_student(setup: &DistillSetup<'_>, cfg: &DistillConfig) -> Result<RayModel<f32>> {
    RayModel::new(
        cfg.layers,
        cfg.width,
        setup.encoding,
        setup.render,
        cfg.head,
        setup.depth,
        &mut init_rng(cfg.seed),
    )
}

/// Trains a student for `cfg.iterations` steps. `observe` sees a metrics record
/// every `log_every` steps (and after the last one) and the model every
/// `checkpoint_every` steps.
pub fn distill(
    setup: &DistillSetup<'_>,
    cfg: &DistillConfig,
    mut observe: impl FnMut(Progress<'_>) -> Result<()>,
) -> Result<RayModel<f32>> {
    cfg.validate()?;
    let mut model = new_student(setup, cfg)?;
    let mut opt = AdamState::new(&model.params, cfg.lr);
    let s = setup.render.s_render;
    for it in 0..cfg.iterations {
        let mut rng = iteration_rng(cfg.seed, it);
        let batch = ovs_batch(setup.teacher, setup.region, setup.depth, cfg, s, &mut rng)?;
        let m = distill_step(&mut model, &batch, &mut opt, cfg, &mut rng, it)?;
        let done = it + 1;
        if cfg.log_every > 0 && (it % cfg.log_every == 0 || done == cfg.iterations) {
            let record = DistillMetrics {
                iteration: it,
                render_loss: m.render_loss,
                vdc_loss: m.vdc_loss,
                total: m.total,
                psnr_probe: setup.probe.psnr(&model)?,
            };
            observe(Progress::Metrics(&record))?;
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            observe(Progress::Checkpoint {
                iteration: done,
                model: &model,
            })?;
        }
    }
    Ok(model)
}

/// The colour-head arm: same encoder, trunk, batches and budget, render loss only.
pub fn train_nelf_baseline(
    setup: &DistillSetup<'_>,
    cfg: &DistillConfig,
    observe: impl FnMut(Progress<'_>) -> Result<()>,
) -> Result<RayModel<f32>> {
    let cfg = DistillConfig {
        head: Head::Rgb,
        enable_vdc: false,
        ..*cfg
    };
    distill(setup, &cfg, observe)
}
