use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TvnetError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TvnetError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at iteration {iteration}: non-finite loss")]
    Divergence { iteration: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

/// Coarse failure classes, used by front ends to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Runtime,
}

impl TvnetError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            TvnetError::Config(_) => ErrorKind::Usage,
            TvnetError::Data(_) | TvnetError::Image { .. } => ErrorKind::Data,
            TvnetError::Io { .. } => ErrorKind::Data,
            TvnetError::Shape(_)
            | TvnetError::InvalidInput(_)
            | TvnetError::Checkpoint(_)
            | TvnetError::Divergence { .. } => ErrorKind::Runtime,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TvnetError::Io {
            path: path.into(),
            source,
        }
    }
}
