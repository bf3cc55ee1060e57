use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a mathematical precondition (shape, range, divisibility).
    #[error("domain error: {0}")]
    Domain(String),

    /// Prediction data failed validation.
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Brute-force routine refused an input that is too large.
    #[error("input of size {n} exceeds guard limit {limit}")]
    Guard { n: usize, limit: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Process exit code for the command-line tool: 2 for domain and
    /// validation problems, 3 for anything touching the filesystem or parsing.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Validation(_) | Error::Config(_) | Error::Guard { .. } => 2,
            Error::Io { .. } | Error::Parse { .. } | Error::Json { .. } => 3,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
