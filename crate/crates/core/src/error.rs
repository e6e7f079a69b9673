use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the fusion toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box [{x1}, {y1}, {x2}, {y2}]: corners must be finite with x1 <= x2 and y1 <= y2")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("duplicate detector id `{0}`")]
    DuplicateDetector(String),

    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("no confidence model for detector `{detector}` / category `{category}`")]
    MissingModel { detector: String, category: String },

    #[error(
        "cannot build confidence model for detector `{detector}` / category `{category}`: {reason}"
    )]
    InsufficientData {
        detector: String,
        category: String,
        reason: String,
    },

    #[error("total conflict in Dempster combination (normalizer {normalizer:e})")]
    TotalConflict { normalizer: f64 },
}

impl Error {
    /// Process exit code for the command-line front end.
    ///
    /// 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 1,
            Error::TotalConflict { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Rejects thresholds outside `(0, 1]`.
pub(crate) fn check_ratio(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must lie in (0, 1], got {value}"
        )))
    }
}
