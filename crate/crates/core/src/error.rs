use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the disaggregation library.
#[derive(Debug, Error)]
pub enum SrrmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no valid data: {0}")]
    NoValidData(String),

    #[error("degenerate segment {segment}: within-segment kernel mass {mass:e}")]
    DegenerateSegment { segment: usize, mass: f64 },

    #[error("solver did not converge after {iterations} iterations (KKT violation {violation:e})")]
    NonConvergence { iterations: usize, violation: f64 },

    #[error("missing feature '{0}' has no observed value anywhere")]
    UnobservedFeature(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SrrmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SrrmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        SrrmError::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SrrmError>;
