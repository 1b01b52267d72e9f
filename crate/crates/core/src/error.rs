use thiserror::Error;

/// Errors surfaced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data (shapes, timestamps, empty sets).
    #[error("input error: {0}")]
    Input(String),
    /// Invalid configuration values.
    #[error("configuration error: {0}")]
    Config(String),
    /// Rank deficiency, non-finite values, loss of positive definiteness.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    /// Unparseable serialized artifact (checkpoint, config document).
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
