use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnnError {
    #[error("vector contains NaN at component {0}")]
    NaN(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },

    #[error("column {0} has no items")]
    EmptyShard(usize),

    #[error("K = {k} is smaller than the number of columns ({columns})")]
    KTooSmall { k: usize, columns: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AnnError> = std::result::Result<T, E>;
