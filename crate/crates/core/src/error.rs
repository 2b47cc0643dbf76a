use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(transparent)]
    UndefinedMetric(#[from] MetricError),

    #[error("failed to load {path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Shape(_) => "shape",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Load { .. } => "load",
            Error::ModelFormat(_) => "model_format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

/// A fairness metric that cannot be computed on the given bundle.
///
/// `cell` names the empty confusion cell or group, e.g. `"privileged/negatives"`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{metric} is undefined: empty {cell}")]
pub struct MetricError {
    pub metric: &'static str,
    pub cell: String,
}
