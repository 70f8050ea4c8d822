use ndarray::Array2;
use rand::Rng;

use super::DistillConfig;
use crate::error::{NerdfError, Result};
use crate::field::TeacherField;
use crate::geometry::{ray_from_pixel, sample_pose_ovs, DepthRange, PoseRegion, Ray, Vec3};

/// One origin, many directions, with teacher supervision for each ray.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub origin: Vec3,
    pub rays: Vec<Ray>,
    /// `rays x 3`.
    pub rgb: Array2<f32>,
    /// Teacher densities at the student's render samples, `rays x s_render`.
    pub sigma: Array2<f32>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

/// Draws a camera (a fresh view-sampled pose, or one of the training poses
/// when view sampling is off) and `cfg.batch` random pixel-centre rays from it,
/// rendered by the teacher at `s_render` samples.
pub fn ovs_batch<R: Rng + ?Sized>(
    teacher: &TeacherField,
    region: &PoseRegion,
    depth: DepthRange,
    cfg: &DistillConfig,
    s_render: usize,
    rng: &mut R,
) -> Result<TrainBatch> {
    if cfg.batch == 0 {
        return Err(NerdfError::InvalidInput("batch must hold at least one ray".into()));
    }
    let pose = if cfg.enable_ovs {
        sample_pose_ovs(region, rng)
    } else {
        region.poses[rng.random_range(0..region.poses.len())].clone()
    };
    let (w, h) = (pose.intrinsics.width, pose.intrinsics.height);
    let rays: Vec<Ray> = (0..cfg.batch)
        .map(|_| {
            let px = rng.random_range(0..w) as f64 + 0.5;
            let py = rng.random_range(0..h) as f64 + 0.5;
            ray_from_pixel(&pose, px, py, depth)
        })
        .collect::<Result<_>>()?;
    let rows = teacher.render_rays(&rays, s_render)?;
    Ok(TrainBatch {
        origin: pose.position,
        rays,
        rgb: rows.rgb.mapv(|v| v as f32),
        sigma: rows.sigma.mapv(|v| v as f32),
    })
}
