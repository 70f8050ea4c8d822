//! Repeated-render benchmarks with a warm-up pass and per-field medians.

use crate::error::{NerdfError, Result};
use crate::eval::timing::TimingBreakdown;
use crate::field::{render_teacher_image, TeacherField};
use crate::geometry::{CameraPose, DepthRange};
use crate::nerdf::model::{render_image, RayModel};

fn check_reps(reps: usize) -> Result<()> {
    if reps < 3 {
        return Err(NerdfError::InvalidInput(format!("benchmarks need at least 3 repetitions, got {reps}")));
    }
    Ok(())
}

/// Median timing of `reps` student renders. Every render must cost exactly
/// one network row per pixel.
pub fn benchmark_render(model: &RayModel<f32>, pose: &CameraPose, reps: usize) -> Result<TimingBreakdown> {
    check_reps(reps)?;
    let pixels = pose.intrinsics.pixel_count() as u64;
    render_image(model, pose)?;
    let mut runs = Vec::with_capacity(reps);
    for _ in 0..reps {
        let before = model.params.forward_rows();
        let (_, t) = render_image(model, pose)?;
        let rows = model.params.forward_rows() - before;
        if rows != pixels {
            return Err(NerdfError::Structural(format!(
                "render used {rows} network rows for {pixels} pixels"
            )));
        }
        runs.push(t);
    }
    Ok(TimingBreakdown::median(&runs))
}

/// Median timing of `reps` teacher renders with `s` field queries per pixel.
pub fn benchmark_teacher(
    teacher: &TeacherField,
    pose: &CameraPose,
    depth: DepthRange,
    s: usize,
    reps: usize,
) -> Result<TimingBreakdown> {
    check_reps(reps)?;
    render_teacher_image(teacher, pose, depth, s)?;
    let runs = (0..reps)
        .map(|_| render_teacher_image(teacher, pose, depth, s).map(|(_, t)| t))
        .collect::<Result<Vec<_>>>()?;
    Ok(TimingBreakdown::median(&runs))
}
