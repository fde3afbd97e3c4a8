use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("illegal state: {0}")]
    IllegalState(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// The exact solver refuses sessions whose mask space is too large.
    #[error("session length {len} exceeds the exhaustive search limit of {max}")]
    TooLong { len: usize, max: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
