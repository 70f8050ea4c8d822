use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NerdfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NerdfError {
    /// A caller-supplied value violates an operation precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Shapes or dimensions of cooperating structures disagree.
    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("training diverged at iteration {iteration} (batch seed {batch_seed}): {detail}")]
    Divergence {
        iteration: u64,
        batch_seed: u64,
        detail: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed file {path}: {detail}")]
    Malformed { path: PathBuf, detail: String },

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl NerdfError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NerdfError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        NerdfError::Malformed {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
