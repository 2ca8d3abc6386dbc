use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents do not line up.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A structurally invalid setting (stride, grouping, width plan, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was invoked on state that is not ready for it.
    #[error("state error: {0}")]
    State(String),

    /// A NaN or infinity surfaced where only finite values are allowed.
    #[error("non-finite value produced by {op}: {detail}")]
    Numeric { op: String, detail: String },

    /// Caller supplied a value outside the accepted domain.
    #[error("input error: {0}")]
    Input(String),

    /// Malformed on-disk bytes.
    #[error("format error at byte offset {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("data not found at {path}: {detail}")]
    MissingData { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(detail: impl Into<String>) -> Self {
        Error::Config(detail.into())
    }
}
