//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Configuration values that are out of range or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// Inputs that violate an operation's preconditions.
    #[error("{0}")]
    InvalidInput(String),

    /// Malformed files: bad magic, truncated payloads, unparseable fields.
    #[error("format error: {0}")]
    Format(String),

    /// Numerical failure during iterative computation (non-finite loss etc.).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
