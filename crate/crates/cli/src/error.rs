use nerdf_core::NerdfError;
use thiserror::Error;

/// Failure of a command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Exit 2: configuration, flags or scene files.
    #[error("{0}")]
    Config(String),
    /// Exit 3: unreadable or incompatible checkpoints and images.
    #[error("{0}")]
    Data(String),
    /// Exit 4: I/O, sockets, numerical divergence.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<NerdfError> for CliError {
    fn from(e: NerdfError) -> Self {
        let msg = e.to_string();
        match e {
            NerdfError::Config(_) | NerdfError::InvalidInput(_) => CliError::Config(msg),
            NerdfError::Malformed { .. } | NerdfError::Incompatible(_) | NerdfError::Structural(_) => {
                CliError::Data(msg)
            }
            NerdfError::Io { .. } | NerdfError::Divergence { .. } => CliError::Runtime(msg),
        }
    }
}

impl From<nerdf_serve::ServeError> for CliError {
    fn from(e: nerdf_serve::ServeError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
