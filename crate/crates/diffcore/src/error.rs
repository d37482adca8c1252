use thiserror::Error;

/// Errors surfaced by the tensor engine, optimizer, and checkpoint I/O.
#[derive(Debug, Error)]
pub enum DiffError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite values produced by {op}")]
    NonFinite { op: &'static str },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DiffError>;

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> DiffError {
    DiffError::Dimension {
        op,
        detail: detail.into(),
    }
}
