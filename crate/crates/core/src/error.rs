use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The variants split into two families: `Invalid*` errors are caller
/// mistakes (bad configuration, mismatched shapes), the rest are I/O or
/// file-format problems. The CLI maps them to distinct exit codes.
#[derive(Debug, Error)]
pub enum RacError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
}

impl RacError {
    pub fn config(msg: impl Into<String>) -> Self {
        RacError::InvalidConfig(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        RacError::InvalidInput(msg.into())
    }

    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        RacError::Format {
            what,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RacError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by I/O failures or malformed files, as
    /// opposed to invalid arguments.
    pub fn is_io_or_format(&self) -> bool {
        matches!(self, RacError::Io { .. } | RacError::Format { .. })
    }
}

pub type Result<T> = std::result::Result<T, RacError>;
