//! Teacher radiance fields: procedural Gaussian-blob scenes with exact
//! densities, and MicroNeRF, a small point-space MLP trained to imitate them.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{encode_points, EncodingConfig};
use crate::error::{NerdfError, Result};
use crate::eval::image::Image;
use crate::eval::timing::{StageClock, TimingBreakdown};
use crate::geometry::{midpoints, pixel_rays, ray_from_pixel, CameraPose, DepthRange, Ray, Vec3};
use crate::nerdf::model::RENDER_CHUNK;
use crate::nerdf::volume::{composite, composite_rows, composite_rows_backward, volume_render, Composite};
use crate::nn::{adam_step, mlp_backward, mlp_forward, mlp_infer, AdamState, MlpParams, MlpSpec};
use crate::scalar::{sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blob {
    pub center: [f64; 3],
    pub radius: f64,
    pub density: f64,
    pub color: [f64; 3],
    /// Blend weight of the view-dependent tint, in `[0, 1]`.
    #[serde(default)]
    pub tint: f64,
}

impl Blob {
    fn validate(&self) -> Result<()> {
        let ok = self.radius > 0.0
            && self.density >= 0.0
            && (0.0..=1.0).contains(&self.tint)
            && self.color.iter().all(|c| (0.0..=1.0).contains(c))
            && self.center.iter().all(|c| c.is_finite());
        if ok {
            Ok(())
        } else {
            Err(NerdfError::Config(format!("invalid blob {self:?}")))
        }
    }

    fn density_at(&self, p: &Vec3) -> f64 {
        let d2 = (p - Vec3::from(self.center)).norm_squared();
        self.density * (-d2 / (self.radius * self.radius)).exp()
    }

    /// Base colour blended towards `0.5 + 0.5 d`.
    fn color_towards(&self, dir: &Vec3) -> [f64; 3] {
        std::array::from_fn(|c| (1.0 - self.tint) * self.color[c] + self.tint * (0.5 + 0.5 * dir[c]))
    }
}

/// Sum of isotropic Gaussian density blobs on a black background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub blobs: Vec<Blob>,
}

impl AnalyticScene {
    pub fn new(blobs: Vec<Blob>) -> Result<Self> {
        for b in &blobs {
            b.validate()?;
        }
        Ok(Self { blobs })
    }

    /// Density and colour at `point` seen along `dir`; colour is the
    /// density-weighted mix of the blob colours.
    pub fn query(&self, point: &Vec3, dir: &Vec3) -> (f64, [f64; 3]) {
        let mut sigma = 0.0;
        let mut acc = [0.0; 3];
        for b in &self.blobs {
            let s = b.density_at(point);
            let c = b.color_towards(dir);
            sigma += s;
            for i in 0..3 {
                acc[i] += s * c[i];
            }
        }
        if sigma > 0.0 {
            (sigma, acc.map(|v| (v / sigma).clamp(0.0, 1.0)))
        } else {
            (0.0, [0.0; 3])
        }
    }

    pub fn scaled_density(&self, factor: f64) -> Self {
        Self {
            blobs: self
                .blobs
                .iter()
                .map(|b| Blob {
                    density: b.density * factor,
                    ..*b
                })
                .collect(),
        }
    }
}

/// Point-space radiance MLP: `[PE(x) | SH(d)] -> (softplus sigma, sigmoid rgb)`.
#[derive(Debug, Clone)]
pub struct MicroNerf {
    pub params: MlpParams<f32>,
    pub encoding: EncodingConfig,
}

impl MicroNerf {
    pub fn query_points(&self, points: &[Vec3], dirs: &[Vec3]) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        let x = encode_points::<f32>(points, dirs, &self.encoding)?;
        let out = mlp_infer(&self.params, x.view())?;
        let sigma = out.column(0).iter().map(|v| softplus(*v) as f64).collect();
        let rgb = out
            .rows()
            .into_iter()
            .map(|r| [sigmoid(r[1]) as f64, sigmoid(r[2]) as f64, sigmoid(r[3]) as f64])
            .collect();
        Ok((sigma, rgb))
    }
}

#[derive(Debug, Clone)]
pub enum TeacherField {
    Analytic(AnalyticScene),
    Micro(MicroNerf),
}

/// Teacher rendering of one ray: colour, the density samples and their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherRender {
    pub rgb: [f64; 3],
    pub sigma: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Colours (`rays x 3`) and density samples (`rays x s`) for a batch of rays.
#[derive(Debug, Clone)]
pub struct TeacherRows {
    pub rgb: Array2<f64>,
    pub sigma: Array2<f64>,
}

impl TeacherField {
    pub fn field_query(&self, point: &Vec3, dir: &Vec3) -> Result<(f64, [f64; 3])> {
        if (dir.norm() - 1.0).abs() > 1e-6 {
            return Err(NerdfError::InvalidInput("query direction must be unit length".into()));
        }
        match self {
            TeacherField::Analytic(scene) => Ok(scene.query(point, dir)),
            TeacherField::Micro(m) => {
                let (s, c) = m.query_points(std::slice::from_ref(point), std::slice::from_ref(dir))?;
                Ok((s[0], c[0]))
            }
        }
    }

    /// `s` field queries per ray at the bin midpoints of `[t_near, t_far]`.
    pub fn render_rays(&self, rays: &[Ray], s: usize) -> Result<TeacherRows> {
        if s < 2 {
            return Err(NerdfError::InvalidInput("teacher rendering needs s >= 2".into()));
        }
        let x = self.encode_stage(rays, s)?;
        let q = self.query_stage(rays, s, x)?;
        Ok(composite_stage(rays, q))
    }

    /// Network inputs for every sample point (MicroNeRF only).
    fn encode_stage(&self, rays: &[Ray], s: usize) -> Result<Option<Array2<f32>>> {
        match self {
            TeacherField::Analytic(_) => Ok(None),
            TeacherField::Micro(m) => {
                let mut points = Vec::with_capacity(rays.len() * s);
                let mut dirs = Vec::with_capacity(rays.len() * s);
                for ray in rays {
                    for t in midpoints(ray.t_near, ray.t_far, s) {
                        points.push(ray.at(t));
                        dirs.push(ray.dir);
                    }
                }
                encode_points::<f32>(&points, &dirs, &m.encoding).map(Some)
            }
        }
    }

    /// Field values at every sample point: `(sigma, [r, g, b])`, each `rays x s`.
    fn query_stage(&self, rays: &[Ray], s: usize, x: Option<Array2<f32>>) -> Result<Samples> {
        let n = rays.len();
        match (self, x) {
            (TeacherField::Micro(m), Some(x)) => {
                let out = mlp_infer(&m.params, x.view())?;
                let col = |c: usize, f: fn(f32) -> f32| {
                    Array2::from_shape_fn((n, s), |(r, i)| f(out[[r * s + i, c]]) as f64)
                };
                Ok(Samples {
                    sigma: col(0, softplus),
                    color: [col(1, sigmoid), col(2, sigmoid), col(3, sigmoid)],
                })
            }
            (TeacherField::Analytic(scene), _) => {
                let mut sigma = Array2::zeros((n, s));
                let mut color: [Array2<f64>; 3] = std::array::from_fn(|_| Array2::zeros((n, s)));
                for (r, ray) in rays.iter().enumerate() {
                    for (i, t) in midpoints(ray.t_near, ray.t_far, s).into_iter().enumerate() {
                        let (sg, c) = scene.query(&ray.at(t), &ray.dir);
                        sigma[[r, i]] = sg;
                        for ch in 0..3 {
                            color[ch][[r, i]] = c[ch];
                        }
                    }
                }
                Ok(Samples { sigma, color })
            }
            (TeacherField::Micro(_), None) => Err(NerdfError::Structural("MicroNeRF query without inputs".into())),
        }
    }
}

struct Samples {
    sigma: Array2<f64>,
    color: [Array2<f64>; 3],
}

fn composite_stage(rays: &[Ray], q: Samples) -> TeacherRows {
    let s = q.sigma.ncols();
    let mut rgb = Array2::zeros((rays.len(), 3));
    for (r, ray) in rays.iter().enumerate() {
        let delta = ray.segment_length() / s as f64;
        let srow = q.sigma.row(r);
        let out = composite(|i| srow[i], |i, c| q.color[c][[r, i]], |_| delta, s, |_, _| {});
        for c in 0..3 {
            rgb[[r, c]] = out[c];
        }
    }
    TeacherRows { rgb, sigma: q.sigma }
}

/// Full-frame teacher render at pixel centres with per-stage timing, tiled
/// the same way as the student renderer.
pub fn render_teacher_image(
    field: &TeacherField,
    pose: &CameraPose,
    depth: DepthRange,
    s: usize,
) -> Result<(Image, TimingBreakdown)> {
    if s < 2 {
        return Err(NerdfError::InvalidInput("teacher rendering needs s >= 2".into()));
    }
    let start = Instant::now();
    let rays = pixel_rays(pose, depth);
    let mut clock = StageClock::default();
    let mut rgb = Vec::with_capacity(rays.len() * 3);
    // s points per ray: smaller chunks keep the encoded block bounded
    let chunk = (RENDER_CHUNK * 8 / s).max(1);
    let tile = chunk * rayon::current_num_threads();
    for tile in rays.chunks(tile) {
        let xs: Vec<Option<Array2<f32>>> = StageClock::time(&mut clock.encode, || {
            tile.par_chunks(chunk).map(|c| field.encode_stage(c, s)).collect::<Result<_>>()
        })?;
        let qs: Vec<Samples> = StageClock::time(&mut clock.network, || {
            tile.par_chunks(chunk)
                .zip(xs)
                .map(|(c, x)| field.query_stage(c, s, x))
                .collect::<Result<_>>()
        })?;
        let out: Vec<TeacherRows> = StageClock::time(&mut clock.render, || {
            tile.par_chunks(chunk).zip(qs).map(|(c, q)| composite_stage(c, q)).collect()
        });
        for o in &out {
            rgb.extend(o.rgb.iter().map(|v| v.clamp(0.0, 1.0) as f32));
        }
    }
    let image = Image::new(pose.intrinsics.width, pose.intrinsics.height, rgb)?;
    Ok((image, clock.finish(start.elapsed(), rays.len() as u64)))
}

/// Discretised volume rendering of the teacher along one ray with `s` samples.
pub fn teacher_render_ray(field: &TeacherField, ray: &Ray, s: usize) -> Result<TeacherRender> {
    if s < 2 {
        return Err(NerdfError::InvalidInput("teacher rendering needs s >= 2".into()));
    }
    let ts = midpoints(ray.t_near, ray.t_far, s);
    let points: Vec<Vec3> = ts.iter().map(|t| ray.at(*t)).collect();
    let (sigma, rgb) = match field {
        TeacherField::Analytic(scene) => points.iter().map(|p| scene.query(p, &ray.dir)).unzip(),
        TeacherField::Micro(m) => m.query_points(&points, &vec![ray.dir; s])?,
    };
    let deltas = vec![ray.segment_length() / s as f64; s];
    let Composite { rgb, weights } = volume_render(&sigma, &rgb, &deltas)?;
    Ok(TeacherRender { rgb, sigma, weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherTrainConfig {
    pub depth: usize,
    pub width: usize,
    pub pe_frequencies: u32,
    pub sh_degree: u32,
    pub iterations: u64,
    pub rays_per_batch: usize,
    pub samples: usize,
    pub lr: f64,
    pub seed: u64,
    pub log_every: u64,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            width: 64,
            pe_frequencies: 6,
            sh_degree: 3,
            iterations: 3000,
            rays_per_batch: 64,
            samples: 64,
            lr: 5e-3,
            seed: 0,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TeacherMetrics {
    pub iteration: u64,
    pub loss: f64,
}

/// Fits MicroNeRF to the rendered colours of an analytic scene from random
/// pixels of the training poses.
pub fn train_micro_nerf(
    scene: &AnalyticScene,
    poses: &[CameraPose],
    depth: DepthRange,
    coord_scale: f64,
    cfg: &TeacherTrainConfig,
    mut log: impl FnMut(TeacherMetrics),
) -> Result<(MicroNerf, Vec<TeacherMetrics>)> {
    if poses.len() < 8 {
        return Err(NerdfError::InvalidInput(format!(
            "teacher training needs at least 8 poses, got {}",
            poses.len()
        )));
    }
    let encoding = EncodingConfig {
        pe_frequencies: cfg.pe_frequencies,
        sh_degree: cfg.sh_degree,
        n_points: 1,
        include_raw: true,
        coord_scale,
    };
    encoding.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spec = MlpSpec {
        input: encoding.point_dim(),
        depth: cfg.depth,
        width: cfg.width,
        output: 4,
        residual: true,
    };
    let mut params = MlpParams::<f32>::init(&spec, &mut rng)?;
    params.biases.last_mut().unwrap()[0] = -1.0;
    let mut opt = AdamState::new(&params, cfg.lr);
    let analytic = TeacherField::Analytic(scene.clone());
    let s = cfg.samples;
    let mut history = Vec::new();

    let iterations = cfg.iterations.max(1);
    for it in 0..iterations {
        let pose = &poses[rng.random_range(0..poses.len())];
        let rays: Vec<Ray> = (0..cfg.rays_per_batch)
            .map(|_| {
                let px = rng.random_range(0.0..pose.intrinsics.width as f64);
                let py = rng.random_range(0.0..pose.intrinsics.height as f64);
                ray_from_pixel(pose, px, py, depth)
            })
            .collect::<Result<_>>()?;
        let target = analytic.render_rays(&rays, s)?.rgb.mapv(|v| v as f32);

        let mut points = Vec::with_capacity(rays.len() * s);
        let mut dirs = Vec::with_capacity(rays.len() * s);
        for ray in &rays {
            for t in midpoints(ray.t_near, ray.t_far, s) {
                points.push(ray.at(t));
                dirs.push(ray.dir);
            }
        }
        let x = encode_points::<f32>(&points, &dirs, &encoding)?;
        let (out, tape) = mlp_forward(&params, x.view(), true)?;
        let b = rays.len();
        let raw_sigma = out.column(0).to_owned().into_shape_with_order((b, s)).unwrap();
        let sigma = raw_sigma.mapv(softplus);
        let color: [Array2<f32>; 3] = std::array::from_fn(|c| {
            out.column(c + 1).mapv(sigmoid).into_shape_with_order((b, s)).unwrap()
        });
        let deltas = vec![(depth.length() / s as f64) as f32; s];
        let cv = [color[0].view(), color[1].view(), color[2].view()];
        let (pred, weights) = composite_rows(sigma.view(), cv, &deltas);
        let diff = &pred - &target;
        let loss = diff.mapv(|v| v * v).sum() as f64 / b as f64;
        if !loss.is_finite() {
            return Err(NerdfError::Divergence {
                iteration: it,
                batch_seed: cfg.seed,
                detail: format!("teacher loss {loss}"),
            });
        }
        let metrics = TeacherMetrics { iteration: it, loss };
        if cfg.log_every > 0 && it % cfg.log_every == 0 {
            log(metrics);
            history.push(metrics);
        }
        if cfg.iterations == 0 {
            break;
        }

        let grad_rgb = diff * (2.0 / b as f32);
        let (gs, gc) = composite_rows_backward(sigma.view(), cv, &deltas, weights.view(), grad_rgb.view());
        let mut grad_out = Array2::<f32>::zeros(out.raw_dim());
        let gs_raw = (raw_sigma.mapv(sigmoid) * &gs).into_shape_with_order(b * s).unwrap();
        grad_out.column_mut(0).assign(&gs_raw);
        for c in 0..3 {
            let g = (color[c].mapv(|v| v * (1.0 - v)) * &gc[c]).into_shape_with_order(b * s).unwrap();
            grad_out.column_mut(c + 1).assign(&g);
        }
        let (grads, _) = mlp_backward(&params, tape.unwrap(), grad_out.view(), false)?;
        adam_step(&mut params, &grads, &mut opt).map_err(|e| match e {
            NerdfError::Divergence { detail, .. } => NerdfError::Divergence {
                iteration: it,
                batch_seed: cfg.seed,
                detail,
            },
            other => other,
        })?;
    }
    Ok((MicroNerf { params, encoding }, history))
}
