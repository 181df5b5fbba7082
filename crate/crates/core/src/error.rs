use std::path::PathBuf;

use thiserror::Error;

/// Every fallible operation in the crate reports through this type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric fault: {0}")]
    NumericFault(String),
    #[error("size exceeded: requested {requested}, only {available} available")]
    SizeExceeded { requested: usize, available: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("failed to load {path}: {reason}")]
    LoadFailure { path: PathBuf, reason: String },
    #[error("write failure: {0}")]
    WriteFailure(#[source] std::io::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
