use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("empty slice: [{t0}, {t1}) does not overlap the trace")]
    EmptySlice { t0: f64, t1: f64 },

    #[error("gap of {gap_seconds:.1} s exceeds the interpolation limit of {limit_seconds:.1} s")]
    GapTooLong { gap_seconds: f64, limit_seconds: f64 },

    #[error("solver did not converge after {iterations} iterations (last gap {gap:e}, residual {residual:e})")]
    NotConverged { iterations: usize, gap: f64, residual: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("column set does not match the model registry: {0}")]
    ColumnMismatch(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn parse(file: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Error::Validation(message.into())
    }

    /// True for failures caused by the filesystem rather than by the content
    /// of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
