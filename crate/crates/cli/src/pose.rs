//! `--pose` values.
//!
//! - `held:N`, `train:N`: the scene's N-th held-out / training camera;
//! - `x,y,z`: camera at that position looking at the scene target;
//! - `x,y,z@w,qx,qy,qz`: explicit camera-to-world quaternion, same convention
//!   as the render service's pose messages.
//!
//! `--width`, `--height` and `--fov` replace the scene camera's values.

use nerdf_core::geometry::{CameraPose, Intrinsics, Vec3};
use nerdf_core::scenes::SceneConfig;
use nerdf_serve::PoseMessage;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, Default)]
pub struct FrameSize {
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub fov_deg: Option<f64>,
}

fn numbers<const N: usize>(text: &str, what: &str) -> CliResult<[f64; N]> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(format!("--pose {what} `{text}`: {e}")))?;
    parts
        .try_into()
        .map_err(|p: Vec<f64>| CliError::Config(format!("--pose {what} needs {N} numbers, got {}", p.len())))
}

pub fn parse_pose(spec: &str, scene: &SceneConfig, size: FrameSize) -> CliResult<CameraPose> {
    let cam = &scene.camera;
    let width = size.width.unwrap_or(cam.width);
    let height = size.height.unwrap_or(cam.height);
    let fov = size.fov_deg.unwrap_or(cam.fov_deg);
    let intr = Intrinsics::from_vertical_fov(width, height, fov)?;

    let indexed = |list: &[[f64; 3]], idx: &str, kind: &str| -> CliResult<Vec3> {
        let i: usize = idx
            .parse()
            .map_err(|_| CliError::Config(format!("--pose {kind}:N needs an index, got `{idx}`")))?;
        list.get(i)
            .map(|p| Vec3::from(*p))
            .ok_or_else(|| CliError::Config(format!("--pose {kind}:{i}: scene has {} {kind} poses", list.len())))
    };
    let look = |position: Vec3| -> CliResult<CameraPose> {
        Ok(CameraPose::look_at(position, Vec3::from(cam.target), Vec3::from(cam.up), intr)?)
    };

    if let Some(i) = spec.strip_prefix("held:") {
        return look(indexed(&cam.held_out, i, "held")?);
    }
    if let Some(i) = spec.strip_prefix("train:") {
        return look(indexed(&cam.training, i, "train")?);
    }
    match spec.split_once('@') {
        None => look(Vec3::from(numbers::<3>(spec, "position")?)),
        Some((pos, quat)) => {
            let msg = PoseMessage {
                v: nerdf_serve::PROTOCOL_VERSION,
                id: 0,
                position: numbers::<3>(pos, "position")?,
                orientation: numbers::<4>(quat, "orientation")?,
                fov_deg: fov,
                width,
                height,
            };
            let unlimited = nerdf_serve::Limits {
                max_width: u32::MAX,
                max_height: u32::MAX,
            };
            msg.validate(&unlimited)
                .and_then(|_| msg.camera_pose())
                .map_err(|e| CliError::Config(format!("--pose {}: {}", e.field, e.message)))
        }
    }
}
