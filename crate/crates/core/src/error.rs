//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by configuration, data handling, the protocol, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or dimension mismatch at an API boundary.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed dataset file.
    #[error("format error: {0}")]
    Format(String),

    /// Dataset could not be located or read.
    #[error("data error: {0}")]
    Data(String),

    /// Client/server message shapes out of agreement.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Metric computed over an empty or ill-formed evaluation set.
    #[error("evaluation error: {0}")]
    Eval(String),

    /// Training aborted (non-finite gradients or loss).
    #[error("training error: {0}")]
    Training(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub fn eval(msg: impl Into<String>) -> Self {
        Error::Eval(msg.into())
    }
}
