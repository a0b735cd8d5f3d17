use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad classes of failure, used by the command line to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("batch norm `{0}` has no running statistics; run at least one training update first")]
    NotTrained(String),

    #[error("no valid (non-ignored) pixels")]
    NoValidPixels,

    #[error("non-finite loss at iteration {iter}")]
    NonFiniteLoss { iter: u64 },

    #[error("gradient check failed: max relative error {max_rel_error:.3e} exceeds {tolerance:.1e}")]
    GradCheckFailed { max_rel_error: f64, tolerance: f64 },

    #[error("overlap {given} is below the network halo; at least {required} is required")]
    OverlapTooSmall { required: usize, given: usize },

    #[error("checkpoint is missing parameters: {}", .0.join(", "))]
    MissingParams(Vec<String>),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed raster container: {0}")]
    Format(String),

    #[error("truncated file: needed {needed} bytes at byte offset {offset}, only {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::OverlapTooSmall { .. } => {
                ErrorClass::Usage
            }
            Error::NonFiniteLoss { .. } | Error::GradCheckFailed { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
