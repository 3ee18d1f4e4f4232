use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("payload of {requested} bits exceeds capacity of {capacity} bits (B={depth}, {height}x{width})")]
    Capacity {
        requested: usize,
        capacity: usize,
        depth: usize,
        height: usize,
        width: usize,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed image: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite value in {what}{}", .location.as_ref().map(|l| format!(" at {l}")).unwrap_or_default())]
    NonFinite {
        what: String,
        location: Option<String>,
    },

    #[error("gradient check failed for {0}")]
    GradCheck(String),
}

/// Stable machine-readable error categories. The numeric codes double as
/// CLI exit codes and as C-ABI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i32)]
pub enum ErrorCategory {
    InvalidArgument = 2,
    Shape = 3,
    Capacity = 4,
    Config = 5,
    Io = 6,
    Image = 7,
    Dataset = 8,
    Checkpoint = 9,
    NonFinite = 10,
    GradCheck = 11,
}

impl ErrorCategory {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorCategory::InvalidArgument => "invalid_argument",
            ErrorCategory::Shape => "shape",
            ErrorCategory::Capacity => "capacity",
            ErrorCategory::Config => "config",
            ErrorCategory::Io => "io",
            ErrorCategory::Image => "image",
            ErrorCategory::Dataset => "dataset",
            ErrorCategory::Checkpoint => "checkpoint",
            ErrorCategory::NonFinite => "non_finite",
            ErrorCategory::GradCheck => "gradcheck",
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Shape { .. } => ErrorCategory::Shape,
            Error::InvalidArgument(_) => ErrorCategory::InvalidArgument,
            Error::Capacity { .. } => ErrorCategory::Capacity,
            Error::Config(_) => ErrorCategory::Config,
            Error::Io { .. } => ErrorCategory::Io,
            Error::Image { .. } => ErrorCategory::Image,
            Error::Dataset(_) => ErrorCategory::Dataset,
            Error::Checkpoint(_) => ErrorCategory::Checkpoint,
            Error::NonFinite { .. } => ErrorCategory::NonFinite,
            Error::GradCheck(_) => ErrorCategory::GradCheck,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
