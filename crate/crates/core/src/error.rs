use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GaitError>;

/// Errors raised across the pipeline.
///
/// The variants are grouped by [`ErrorClass`] so callers such as the CLI can
/// map them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum GaitError {
    #[error("config error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("empty silhouette at frame {frame}")]
    EmptySilhouette { frame: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{path}: line {line}: expected 85, got {got}")]
    SmplArity {
        path: PathBuf,
        line: usize,
        got: usize,
    },

    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("label {label} outside [0, {num_classes})")]
    Label { label: usize, num_classes: usize },

    #[error("non-finite loss at iteration {iteration} (batch: {batch})")]
    NonFinite { iteration: usize, batch: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl GaitError {
    pub fn class(&self) -> ErrorClass {
        match self {
            GaitError::Config(_) | GaitError::Shape(_) => ErrorClass::Config,
            GaitError::NonFinite { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GaitError::Io {
            path: path.into(),
            source,
        }
    }
}
