//! Teacher-to-student distillation.

pub mod batch;
pub mod loss;
pub mod probe;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{NerdfError, Result};
use crate::nerdf::model::Head;
use crate::nn::DEFAULT_LR;

pub use batch::{ovs_batch, TrainBatch};
pub use loss::{normalize_density, render_loss, vdc_loss};
pub use probe::{held_out_psnr, teacher_image, ProbeSet};
pub use train::{distill, distill_step, loss_and_grads, train_nelf_baseline, DistillMetrics, DistillSetup, Progress};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Ray directions per batch (all from one origin).
    pub batch: usize,
    pub lambda_vdc: f64,
    pub iterations: u64,
    pub seed: u64,
    pub enable_vdc: bool,
    pub enable_ovs: bool,
    pub head: Head,
    /// Hidden layers of the student trunk.
    pub layers: usize,
    pub width: usize,
    pub lr: f64,
    pub log_every: u64,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            batch: 2048,
            lambda_vdc: 0.1,
            iterations: 50_000,
            seed: 0,
            enable_vdc: true,
            enable_ovs: true,
            head: Head::Distribution,
            layers: 4,
            width: 64,
            lr: DEFAULT_LR,
            log_every: 500,
            checkpoint_every: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(NerdfError::Config("distill.batch must be at least 1".into()));
        }
        if !(self.lambda_vdc >= 0.0) {
            return Err(NerdfError::Config("distill.lambda_vdc must be non-negative".into()));
        }
        if self.layers == 0 || self.width == 0 {
            return Err(NerdfError::Config("student needs at least one hidden layer of non-zero width".into()));
        }
        if !(self.lr > 0.0) {
            return Err(NerdfError::Config("distill.lr must be positive".into()));
        }
        Ok(())
    }
}
