use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Everything the command line can fail with, mapped onto exit codes.
#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Core(#[from] varshift_core::Error),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{path}:{line}: {message}")]
    Config {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{failed} of {total} cells failed")]
    CellFailures { failed: usize, total: usize },
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        AppError::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 success, 1 validation, 2 cell failure, 3 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Core(varshift_core::Error::Divergence { .. }) => 3,
            AppError::CellFailures { .. } => 2,
            _ => 1,
        }
    }
}
