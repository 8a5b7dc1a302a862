use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum EwcError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),

    #[error("cannot form {k} clusters from {n} users")]
    TooManyClusters { k: usize, n: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Coarse error category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Io,
    Model,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Io => 4,
            ErrorCategory::Model => 5,
        }
    }
}

impl EwcError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            EwcError::Config(_) | EwcError::UnknownPolicy(_) | EwcError::Json { .. } => {
                ErrorCategory::Config
            }
            EwcError::Data(_) | EwcError::Csv { .. } => ErrorCategory::Data,
            EwcError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ErrorCategory::Data
            }
            EwcError::Io { .. } => ErrorCategory::Io,
            EwcError::InvalidInput(_) | EwcError::TooManyClusters { .. } => ErrorCategory::Model,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EwcError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, EwcError>;
