use std::io;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped so that a front end can map them onto distinct exit
/// statuses: configuration problems, data problems and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{0}")]
    InvalidData(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("payload size mismatch: expected {expected} values, found {found}")]
    PayloadSizeMismatch { expected: usize, found: usize },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("missing manifest at {0}")]
    MissingManifest(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter(_) => ErrorKind::Config,
            Error::Numeric(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::InvalidData(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
