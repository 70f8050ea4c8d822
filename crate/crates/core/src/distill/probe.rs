//! Fixed evaluation sets: held-out views and a seeded probe-ray sample.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::normalize_rows;
use crate::error::{NerdfError, Result};
use crate::eval::image::Image;
use crate::eval::metrics::{psnr, psnr_from_mse};
use crate::field::{render_teacher_image, TeacherField};
use crate::geometry::{ray_from_pixel, CameraPose, DepthRange, Ray};
use crate::nerdf::model::{render_image, render_rays_chunked, Head, RayModel};

/// Teacher rendering of a full frame at pixel centres.
pub fn teacher_image(teacher: &TeacherField, pose: &CameraPose, depth: DepthRange, s: usize) -> Result<Image> {
    Ok(render_teacher_image(teacher, pose, depth, s)?.0)
}

/// Student-vs-teacher PSNR on each pose.
pub fn held_out_psnr(model: &RayModel<f32>, teacher: &TeacherField, poses: &[CameraPose]) -> Result<Vec<f64>> {
    poses
        .iter()
        .map(|pose| {
            let gt = teacher_image(teacher, pose, model.depth, model.render.s_render)?;
            let (img, _) = render_image(model, pose)?;
            psnr(&img, &gt)
        })
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Seeded random pixel rays with their teacher colours and normalised densities.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub rays: Vec<Ray>,
    pub rgb: Array2<f64>,
    pub density: Array2<f64>,
}

impl ProbeSet {
    pub fn new(
        teacher: &TeacherField,
        poses: &[CameraPose],
        depth: DepthRange,
        s: usize,
        count: usize,
        seed: u64,
    ) -> Result<Self> {
        if poses.is_empty() {
            return Err(NerdfError::InvalidInput("probe set needs at least one pose".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rays: Vec<Ray> = (0..count)
            .map(|_| {
                let pose = &poses[rng.random_range(0..poses.len())];
                let px = rng.random_range(0..pose.intrinsics.width) as f64 + 0.5;
                let py = rng.random_range(0..pose.intrinsics.height) as f64 + 0.5;
                ray_from_pixel(pose, px, py, depth)
            })
            .collect::<Result<_>>()?;
        let rows = teacher.render_rays(&rays, s)?;
        Ok(Self {
            rays,
            density: normalize_rows(rows.sigma.view()),
            rgb: rows.rgb,
        })
    }

    pub fn psnr(&self, model: &RayModel<f32>) -> Result<f64> {
        let pred = render_rays_chunked(model, &self.rays)?;
        let n = pred.len().max(1) as f64;
        let mse = pred
            .iter()
            .zip(self.rgb.iter())
            .map(|(p, t)| {
                let d = (p.clamp(0.0, 1.0) as f64) - t;
                d * d
            })
            .sum::<f64>()
            / n;
        Ok(psnr_from_mse(mse))
    }

    /// Mean squared difference of normalised student and teacher densities.
    pub fn density_mse(&self, model: &RayModel<f32>) -> Result<f64> {
        if model.head != Head::Distribution {
            return Err(NerdfError::Structural("colour head has no densities".into()));
        }
        if self.density.ncols() != model.render.s_render {
            return Err(NerdfError::Structural(format!(
                "probe holds {} samples per ray, model renders {}",
                self.density.ncols(),
                model.render.s_render
            )));
        }
        let mut sum = 0.0;
        for chunk in (0..self.rays.len()).collect::<Vec<_>>().chunks(crate::nerdf::model::RENDER_CHUNK) {
            let rays: Vec<Ray> = chunk.iter().map(|i| self.rays[*i]).collect();
            let sigma = model.render_rays(&rays)?.sigma.expect("distribution head yields densities");
            let n = normalize_rows(sigma.mapv(|v| v as f64).view());
            for (row, &i) in n.rows().into_iter().zip(chunk) {
                sum += row
                    .iter()
                    .zip(self.density.row(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
        }
        Ok(sum / self.density.len().max(1) as f64)
    }
}
