use std::path::PathBuf;

use mgdspr_ann::AnnError;
use mgdspr_numerics::NumericsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown {kind} id {id}")]
    Dangling { kind: &'static str, id: u64 },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty query")]
    EmptyQuery,

    #[error("numeric failure: {0}")]
    Numeric(#[from] NumericsError),

    #[error("training diverged at step {step}: {cause}")]
    Diverged { step: usize, cause: String },

    #[error(transparent)]
    Ann(#[from] AnnError),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CoreError {
    pub fn file(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CoreError::File { path, source }
    }

    /// Process exit code: 2 for bad input data, 3 for numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CoreError::Numeric(_) | CoreError::Diverged { .. } => 3,
            CoreError::Ann(AnnError::NaN(_)) => 3,
            CoreError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
