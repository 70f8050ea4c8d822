//! Scene configuration files: camera rig, view-sampling region and the
//! analytic blobs. Three scenes ship with the crate and are addressable by name.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NerdfError, Result};
use crate::field::{AnalyticScene, Blob};
use crate::geometry::{CameraPose, DepthRange, Intrinsics, PoseRegion, Vec3};

pub const BUILTIN: [(&str, &str); 3] = [
    ("sphere", include_str!("../scenes/sphere.toml")),
    ("triplet", include_str!("../scenes/triplet.toml")),
    ("occluder", include_str!("../scenes/occluder.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRig {
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
    pub near: f64,
    pub far: f64,
    /// Bounding radius used to bring coordinates to `O(1)` before encoding.
    pub coord_scale: f64,
    pub training: Vec<[f64; 3]>,
    pub held_out: Vec<[f64; 3]>,
    pub target: [f64; 3],
    pub up: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OvsConfig {
    pub jitter_radius: f64,
    /// Radians.
    pub jitter_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub name: String,
    pub camera: CameraRig,
    pub ovs: OvsConfig,
    #[serde(default)]
    pub blobs: Vec<Blob>,
}

impl SceneConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SceneConfig = toml::from_str(text).map_err(|e| NerdfError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::parse(text).expect("built-in scenes are valid"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NerdfError::Config(format!("cannot read scene file {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| NerdfError::Config(format!("{}: {e}", path.display())))
    }

    /// A built-in scene name, or else a path to a scene file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match Self::builtin(name_or_path) {
            Some(cfg) => Ok(cfg),
            None => Self::load(Path::new(name_or_path)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.camera;
        self.depth_range()?;
        self.intrinsics()?;
        if !(c.coord_scale > 0.0) {
            return Err(NerdfError::Config("camera.coord_scale must be positive".into()));
        }
        if c.training.is_empty() {
            return Err(NerdfError::Config("camera.training needs at least one pose".into()));
        }
        if !(self.ovs.jitter_radius >= 0.0 && self.ovs.jitter_angle >= 0.0) {
            return Err(NerdfError::Config("ovs jitter values must be non-negative".into()));
        }
        AnalyticScene::new(self.blobs.clone())?;
        self.training_poses()?;
        self.held_out_poses()?;
        Ok(())
    }

    pub fn depth_range(&self) -> Result<DepthRange> {
        DepthRange::new(self.camera.near, self.camera.far)
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::from_vertical_fov(self.camera.width, self.camera.height, self.camera.fov_deg)
    }

    fn poses(&self, positions: &[[f64; 3]]) -> Result<Vec<CameraPose>> {
        let intr = self.intrinsics()?;
        positions
            .iter()
            .map(|p| {
                CameraPose::look_at(
                    Vec3::from(*p),
                    Vec3::from(self.camera.target),
                    Vec3::from(self.camera.up),
                    intr,
                )
            })
            .collect()
    }

    pub fn training_poses(&self) -> Result<Vec<CameraPose>> {
        self.poses(&self.camera.training)
    }

    pub fn held_out_poses(&self) -> Result<Vec<CameraPose>> {
        self.poses(&self.camera.held_out)
    }

    pub fn region(&self) -> Result<PoseRegion> {
        PoseRegion::new(self.training_poses()?, self.ovs.jitter_radius, self.ovs.jitter_angle)
    }

    pub fn analytic(&self) -> Result<AnalyticScene> {
        AnalyticScene::new(self.blobs.clone())
    }
}
