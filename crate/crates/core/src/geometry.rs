//! Cameras, rays, pose sampling and ray-point sampling.
//!
//! Coordinate convention (used everywhere in this crate): right-handed world
//! and camera frames. In camera space the camera looks along `+z`, image `x`
//! grows to the right along `+x` and image `y` grows downward along `+y`.
//! A pose's `orientation` maps camera-space vectors to world space.

use nalgebra::{Rotation3, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NerdfError, Result};

pub type Vec3 = Vector3<f64>;

const UNIT_TOL: f64 = 1e-6;

/// Depth interval `[near, far]` along every camera ray of a scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub near: f64,
    pub far: f64,
}

impl DepthRange {
    pub fn new(near: f64, far: f64) -> Result<Self> {
        if !(near >= 0.0 && far > near && far.is_finite()) {
            return Err(NerdfError::InvalidInput(format!(
                "depth range requires 0 <= near < far, got [{near}, {far}]"
            )));
        }
        Ok(Self { near, far })
    }

    pub fn length(&self) -> f64 {
        self.far - self.near
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3, t_near: f64, t_far: f64) -> Result<Self> {
        if (dir.norm() - 1.0).abs() > UNIT_TOL {
            return Err(NerdfError::InvalidInput(format!(
                "ray direction must be unit length, |d| = {}",
                dir.norm()
            )));
        }
        if !(t_near >= 0.0 && t_far > t_near) {
            return Err(NerdfError::InvalidInput(format!(
                "ray bounds require 0 <= t_near < t_far, got [{t_near}, {t_far}]"
            )));
        }
        Ok(Self {
            origin,
            dir,
            t_near,
            t_far,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }

    pub fn segment_length(&self) -> f64 {
        self.t_far - self.t_near
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    /// Square pixels, principal point at the image centre, given vertical field of view.
    pub fn from_vertical_fov(width: u32, height: u32, fov_deg: f64) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(NerdfError::InvalidInput(format!(
                "vertical fov must lie in (0, 180) degrees, got {fov_deg}"
            )));
        }
        let fy = 0.5 * height as f64 / (0.5 * fov_deg.to_radians()).tan();
        let intr = Self {
            fx: fy,
            fy,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(NerdfError::InvalidInput(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub position: Vec3,
    /// Camera-to-world rotation.
    pub orientation: Rotation3<f64>,
    pub intrinsics: Intrinsics,
}

impl CameraPose {
    pub fn new(position: Vec3, orientation: Rotation3<f64>, intrinsics: Intrinsics) -> Result<Self> {
        intrinsics.validate()?;
        let m = orientation.matrix();
        let ortho_err = (m * m.transpose() - nalgebra::Matrix3::identity()).abs().max();
        if ortho_err > UNIT_TOL || (m.determinant() - 1.0).abs() > UNIT_TOL {
            return Err(NerdfError::InvalidInput(
                "orientation must be a proper rotation".into(),
            ));
        }
        if !position.iter().all(|v| v.is_finite()) {
            return Err(NerdfError::InvalidInput("non-finite camera position".into()));
        }
        Ok(Self {
            position,
            orientation,
            intrinsics,
        })
    }

    /// Camera at `position` looking at `target`; image-up follows `up`.
    pub fn look_at(position: Vec3, target: Vec3, up: Vec3, intrinsics: Intrinsics) -> Result<Self> {
        let forward = target - position;
        if forward.norm() < 1e-12 {
            return Err(NerdfError::InvalidInput("look_at target equals position".into()));
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(NerdfError::InvalidInput("look_at up vector parallel to view axis".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let m = nalgebra::Matrix3::from_columns(&[x, y, z]);
        Self::new(position, Rotation3::from_matrix_unchecked(m), intrinsics)
    }

    pub fn from_quaternion(position: Vec3, q: UnitQuaternion<f64>, intrinsics: Intrinsics) -> Result<Self> {
        Self::new(position, q.to_rotation_matrix(), intrinsics)
    }
}

/// Primary ray through sub-pixel location `(px, py)`.
pub fn ray_from_pixel(pose: &CameraPose, px: f64, py: f64, depth: DepthRange) -> Result<Ray> {
    let intr = &pose.intrinsics;
    if !(px >= 0.0 && px < intr.width as f64 && py >= 0.0 && py < intr.height as f64) {
        return Err(NerdfError::InvalidInput(format!(
            "pixel ({px}, {py}) outside {}x{} image",
            intr.width, intr.height
        )));
    }
    let cam = Vec3::new((px - intr.cx) / intr.fx, (py - intr.cy) / intr.fy, 1.0);
    let dir = (pose.orientation * cam).normalize();
    Ray::new(pose.position, dir, depth.near, depth.far)
}

/// Rays through every pixel centre, row-major.
pub fn pixel_rays(pose: &CameraPose, depth: DepthRange) -> Vec<Ray> {
    let intr = &pose.intrinsics;
    let mut rays = Vec::with_capacity(intr.pixel_count());
    for y in 0..intr.height {
        for x in 0..intr.width {
            rays.push(
                ray_from_pixel(pose, x as f64 + 0.5, y as f64 + 0.5, depth)
                    .expect("pixel centres are always inside the image"),
            );
        }
    }
    rays
}

/// One uniformly jittered sample per equal-width bin of `[t_near, t_far)`, ascending.
pub fn stratified_samples<R: Rng + ?Sized>(ray: &Ray, n: usize, rng: &mut R) -> Vec<f64> {
    assert!(n >= 1, "stratified_samples needs at least one bin");
    let step = ray.segment_length() / n as f64;
    (0..n)
        .map(|i| {
            let u: f64 = rng.random();
            let t = ray.t_near + (i as f64 + u) * step;
            // keep the sample inside its half-open bin under rounding
            t.min(ray.t_near + (i + 1) as f64 * step - step * 1e-12)
        })
        .collect()
}

/// Bin midpoints of `s` equal bins over `[t_near, t_far]`.
pub fn uniform_samples(ray: &Ray, s: usize) -> Vec<f64> {
    assert!(s >= 2, "uniform_samples needs at least two samples");
    midpoints(ray.t_near, ray.t_far, s)
}

pub(crate) fn midpoints(near: f64, far: f64, s: usize) -> Vec<f64> {
    let step = (far - near) / s as f64;
    (0..s).map(|i| near + (i as f64 + 0.5) * step).collect()
}

/// Region of camera space in which pseudo training views are drawn.
#[derive(Debug, Clone)]
pub struct PoseRegion {
    pub poses: Vec<CameraPose>,
    pub jitter_radius: f64,
    /// Maximum angular jitter in radians.
    pub jitter_angle: f64,
}

impl PoseRegion {
    pub fn new(poses: Vec<CameraPose>, jitter_radius: f64, jitter_angle: f64) -> Result<Self> {
        if poses.is_empty() {
            return Err(NerdfError::InvalidInput("pose region needs at least one pose".into()));
        }
        if !(jitter_radius >= 0.0 && jitter_angle >= 0.0) {
            return Err(NerdfError::InvalidInput("jitter values must be >= 0".into()));
        }
        Ok(Self {
            poses,
            jitter_radius,
            jitter_angle,
        })
    }
}

/// Random pose between two random training poses, plus bounded jitter.
pub fn sample_pose_ovs<R: Rng + ?Sized>(region: &PoseRegion, rng: &mut R) -> CameraPose {
    let n = region.poses.len();
    let a = rng.random_range(0..n);
    let b = rng.random_range(0..n);
    let w: f64 = rng.random();
    interpolate_pose(region, a, b, w, rng)
}

/// Blend of training poses `a` and `b` with weight `w` on `b`, then jittered.
pub fn interpolate_pose<R: Rng + ?Sized>(
    region: &PoseRegion,
    a: usize,
    b: usize,
    w: f64,
    rng: &mut R,
) -> CameraPose {
    let pa = &region.poses[a];
    let pb = &region.poses[b];
    let (mut position, mut orientation) = if w == 0.0 {
        (pa.position, pa.orientation)
    } else if w == 1.0 {
        (pb.position, pb.orientation)
    } else {
        let qa = UnitQuaternion::from_rotation_matrix(&pa.orientation);
        let qb = UnitQuaternion::from_rotation_matrix(&pb.orientation);
        let q = qa.try_slerp(&qb, w, 1e-9).unwrap_or(qa);
        (
            pa.position * (1.0 - w) + pb.position * w,
            q.to_rotation_matrix(),
        )
    };

    if region.jitter_radius > 0.0 {
        position += random_in_ball(rng) * region.jitter_radius;
    }
    if region.jitter_angle > 0.0 {
        let axis = Unit::new_normalize(random_unit(rng));
        let angle = rng.random::<f64>() * region.jitter_angle;
        orientation *= Rotation3::from_axis_angle(&axis, angle);
        // re-orthonormalize after composition
        orientation = UnitQuaternion::from_rotation_matrix(&orientation).to_rotation_matrix();
    }

    CameraPose {
        position,
        orientation,
        intrinsics: pa.intrinsics,
    }
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_in_ball<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v;
        }
    }
}
