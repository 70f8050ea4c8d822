//! Ray-space networks: the distribution model (one forward per ray, then
//! volume rendering of the decoded distribution) and the direct-colour
//! light-field baseline.

use std::cell::RefCell;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fourier::{basis_matrix, decode_raw, decode_rows, local_midpoints, FourierCoeffs};
use super::volume::{composite, composite_rows};
use crate::encoding::{encode_rays, encode_rays_into, EncodingConfig, PathSampling};
use crate::error::{NerdfError, Result};
use crate::eval::image::Image;
use crate::eval::timing::{StageClock, TimingBreakdown};
use crate::geometry::{pixel_rays, CameraPose, DepthRange, Ray};
use crate::nn::{mlp_infer, MlpParams, MlpSpec};
use crate::scalar::{sigmoid, softplus, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub s_render: usize,
    /// Frequencies per distribution.
    pub k: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { s_render: 64, k: 12 }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s_render < 2 || self.k < 1 {
            return Err(NerdfError::Config("render config requires s_render >= 2 and K >= 1".into()));
        }
        Ok(())
    }
}

/// What the network's output row means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// `8K` Fourier coefficients of opacity and colour along the ray.
    Distribution,
    /// Three sigmoid colour channels (light-field baseline).
    Rgb,
}

impl Head {
    pub fn output_dim(self, rc: &RenderConfig) -> usize {
        match self {
            Head::Distribution => 8 * rc.k,
            Head::Rgb => 3,
        }
    }
}

/// Initial raw value of the opacity DC coefficient.
pub const OPACITY_DC_INIT: f64 = -1.0;

/// Rays per rendering chunk. Fixed so every caller batches identically.
pub const RENDER_CHUNK: usize = 512;

#[derive(Debug, Clone)]
pub struct RayModel<T: Scalar = f32> {
    pub params: MlpParams<T>,
    pub encoding: EncodingConfig,
    pub render: RenderConfig,
    pub head: Head,
    pub depth: DepthRange,
}

/// Per-ray results of a batch render.
#[derive(Debug, Clone)]
pub struct RayOutputs<T> {
    pub rgb: Array2<T>,
    /// Decoded densities (`rays x s_render`); absent for the colour head.
    pub sigma: Option<Array2<T>>,
    pub weights: Option<Array2<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayRender {
    pub rgb: [f64; 3],
    pub sigma: Vec<f64>,
    pub weights: Vec<f64>,
}

impl<T: Scalar> RayModel<T> {
    pub fn new<R: Rng + ?Sized>(
        depth_layers: usize,
        width: usize,
        encoding: EncodingConfig,
        render: RenderConfig,
        head: Head,
        depth: DepthRange,
        rng: &mut R,
    ) -> Result<Self> {
        encoding.validate()?;
        render.validate()?;
        let spec = MlpSpec {
            input: encoding.ray_dim(),
            depth: depth_layers,
            width,
            output: head.output_dim(&render),
            residual: true,
        };
        let mut params = MlpParams::init(&spec, rng)?;
        if head == Head::Distribution {
            params.biases.last_mut().unwrap()[0] = T::of(OPACITY_DC_INIT);
        }
        Self::from_params(params, encoding, render, head, depth)
    }

    pub fn from_params(
        params: MlpParams<T>,
        encoding: EncodingConfig,
        render: RenderConfig,
        head: Head,
        depth: DepthRange,
    ) -> Result<Self> {
        encoding.validate()?;
        render.validate()?;
        if params.input_dim() != encoding.ray_dim() {
            return Err(NerdfError::Structural(format!(
                "network input {} does not match encoding width {}",
                params.input_dim(),
                encoding.ray_dim()
            )));
        }
        if params.output_dim() != head.output_dim(&render) {
            return Err(NerdfError::Structural(format!(
                "network output {} does not match {:?} head ({} channels)",
                params.output_dim(),
                head,
                head.output_dim(&render)
            )));
        }
        Ok(Self {
            params,
            encoding,
            render,
            head,
            depth,
        })
    }

    pub fn t_period(&self) -> f64 {
        self.depth.length()
    }

    /// Ray-local render sample positions in `[0, T]`.
    pub fn local_samples(&self) -> Vec<f64> {
        local_midpoints(self.t_period(), self.render.s_render)
    }

    pub fn basis(&self) -> Array2<T> {
        basis_matrix(&self.local_samples(), self.render.k, self.t_period())
    }

    pub fn deltas(&self) -> Vec<T> {
        vec![T::of(self.t_period() / self.render.s_render as f64); self.render.s_render]
    }

    /// Inference-time encoding (midpoint path samples).
    pub fn encode(&self, rays: &[Ray]) -> Result<Array2<T>> {
        encode_rays::<T, ChaCha8Rng>(rays, &self.encoding, &mut PathSampling::Midpoints)
    }

    pub fn encode_into(&self, rays: &[Ray], out: &mut Array2<T>) -> Result<()> {
        encode_rays_into::<T, ChaCha8Rng>(rays, &self.encoding, &mut PathSampling::Midpoints, out)
    }

    /// Decodes network outputs into colours (and distributions for the distribution head).
    pub fn finish(&self, out: ArrayView2<'_, T>, basis: &Array2<T>, deltas: &[T]) -> Result<RayOutputs<T>> {
        match self.head {
            Head::Rgb => Ok(RayOutputs {
                rgb: out.mapv(sigmoid),
                sigma: None,
                weights: None,
            }),
            Head::Distribution => {
                let d = decode_rows(out, basis)?;
                let (rgb, weights) =
                    composite_rows(d.sigma.view(), [d.color[0].view(), d.color[1].view(), d.color[2].view()], deltas);
                Ok(RayOutputs {
                    rgb,
                    sigma: Some(d.sigma),
                    weights: Some(weights),
                })
            }
        }
    }

    /// Colours only, bitwise equal to `finish(..).rgb`. Skips materialising
    /// the decoded distributions and weights.
    pub fn finish_rgb(&self, out: ArrayView2<'_, T>, basis: &Array2<T>, deltas: &[T]) -> Result<Array2<T>> {
        if self.head == Head::Rgb {
            return Ok(out.mapv(sigmoid));
        }
        let raw = decode_raw(out, basis)?;
        let n = basis.nrows();
        let mut rgb = Array2::zeros((out.nrows(), 3));
        for (r, mut dst) in rgb.rows_mut().into_iter().enumerate() {
            let rows = [raw[0].row(r), raw[1].row(r), raw[2].row(r), raw[3].row(r)];
            let c = composite(
                |i| softplus(rows[0][i]),
                |i, c| sigmoid(rows[c + 1][i]),
                |i| deltas[i],
                n,
                |_, _| {},
            );
            dst.assign(&ndarray::aview1(&c));
        }
        Ok(rgb)
    }

    /// One network forward per ray.
    pub fn render_rays(&self, rays: &[Ray]) -> Result<RayOutputs<T>> {
        let x = self.encode(rays)?;
        let out = mlp_infer(&self.params, x.view())?;
        self.finish(out.view(), &self.basis(), &self.deltas())
    }

    /// Raw coefficients of one ray's distribution.
    pub fn coefficients(&self, ray: &Ray) -> Result<FourierCoeffs> {
        if self.head != Head::Distribution {
            return Err(NerdfError::Structural("colour head has no distribution".into()));
        }
        let x = self.encode(std::slice::from_ref(ray))?;
        let out = mlp_infer(&self.params, x.view())?;
        let ch: Vec<f64> = out.row(0).iter().map(|v| v.f64()).collect();
        FourierCoeffs::from_channels(&ch, self.render.k, self.t_period())
    }

    pub fn render_ray(&self, ray: &Ray) -> Result<RayRender> {
        let o = self.render_rays(std::slice::from_ref(ray))?;
        let row = |a: &Option<Array2<T>>| a.as_ref().map(|m| m.row(0).iter().map(|v| v.f64()).collect()).unwrap_or_default();
        Ok(RayRender {
            rgb: [o.rgb[[0, 0]].f64(), o.rgb[[0, 1]].f64(), o.rgb[[0, 2]].f64()],
            sigma: row(&o.sigma),
            weights: row(&o.weights),
        })
    }

    pub fn cast<U: Scalar>(&self) -> RayModel<U> {
        RayModel {
            params: self.params.cast(),
            encoding: self.encoding,
            render: self.render,
            head: self.head,
            depth: self.depth,
        }
    }
}

thread_local! {
    static ENCODE_POOL: RefCell<Vec<Array2<f32>>> = const { RefCell::new(Vec::new()) };
}

/// Full-frame render with per-stage timing.
///
/// Stages run one after another per tile of rays (each stage parallel over
/// chunks), so stage times are disjoint slices of the total.
pub fn render_image(model: &RayModel<f32>, pose: &CameraPose) -> Result<(Image, TimingBreakdown)> {
    let start = Instant::now();
    let rays = pixel_rays(pose, model.depth);
    let basis = model.basis();
    let deltas = model.deltas();
    let mut clock = StageClock::default();
    let mut rgb = Vec::with_capacity(rays.len() * 3);

    // encoded tiles are large; keeping them between frames avoids paying for
    // fresh pages on every render
    let mut pool = ENCODE_POOL.with(|p| std::mem::take(&mut *p.borrow_mut()));
    const TILE: usize = 64 * RENDER_CHUNK;
    for tile in rays.chunks(TILE) {
        let chunks: Vec<&[Ray]> = tile.chunks(RENDER_CHUNK).collect();
        if pool.len() < chunks.len() {
            pool.resize_with(chunks.len(), || Array2::zeros((0, 0)));
        }
        let encoded = &mut pool[..chunks.len()];
        StageClock::time(&mut clock.encode, || {
            encoded
                .par_iter_mut()
                .zip(&chunks)
                .try_for_each(|(buf, c)| model.encode_into(c, buf))
        })?;
        let outputs: Vec<Array2<f32>> = StageClock::time(&mut clock.network, || {
            encoded.par_iter().map(|x| mlp_infer(&model.params, x.view())).collect::<Result<_>>()
        })?;
        let colors: Vec<Array2<f32>> = StageClock::time(&mut clock.render, || {
            outputs
                .par_iter()
                .map(|o| model.finish_rgb(o.view(), &basis, &deltas))
                .collect::<Result<_>>()
        })?;
        for c in &colors {
            rgb.extend(c.iter().map(|v| v.clamp(0.0, 1.0)));
        }
    }
    ENCODE_POOL.with(|p| *p.borrow_mut() = pool);
    let intr = pose.intrinsics;
    let image = Image::new(intr.width, intr.height, rgb)?;
    let timing = clock.finish(start.elapsed(), rays.len() as u64);
    Ok((image, timing))
}

/// Renders a set of rays in fixed-size chunks; returns colours row-major.
pub fn render_rays_chunked(model: &RayModel<f32>, rays: &[Ray]) -> Result<Array2<f32>> {
    let parts: Vec<Array2<f32>> = rays
        .par_chunks(RENDER_CHUNK)
        .map(|c| model.render_rays(c).map(|o| o.rgb))
        .collect::<Result<_>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    if views.is_empty() {
        return Ok(Array2::zeros((0, 3)));
    }
    Ok(ndarray::concatenate(ndarray::Axis(0), &views).expect("chunks share column count"))
}
