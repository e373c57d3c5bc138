use std::path::PathBuf;

use crate::geometry::RangingMode;

/// Errors produced anywhere in the correction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("unknown anchor id {0}")]
    UnknownAnchor(u32),

    #[error("ranging mode mismatch: expected {expected}, found {found}")]
    ModeMismatch { expected: RangingMode, found: RangingMode },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty run log")]
    EmptyLog,

    #[error("too few samples: need at least {needed}, have {available}")]
    TooFewSamples { needed: usize, available: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("time {t} outside trajectory span [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },

    #[error("incompatible logs: {0}")]
    IncompatibleLogs(String),

    #[error("malformed {what} file {path}: {reason}")]
    Format {
        what: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("unsupported weight file version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Format {
            what,
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
