use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an API precondition (shape mismatch, empty input, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed input data; `line` is 1-based where applicable.
    #[error("data error at line {line}: {message}")]
    Data { line: usize, message: String },

    /// Checkpoint file could not be read back (version, truncation, hash).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A forward or backward pass produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn data(line: usize, msg: impl Into<String>) -> Self {
        Error::Data {
            line,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
