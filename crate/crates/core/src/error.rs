use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A malformed row in a tabular input. `row` is 1-based and counts the header.
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("template error: unknown placeholder(s) {}", .tokens.join(", "))]
    Template { tokens: Vec<String> },

    /// Retryable: connection refused, timeout, overloaded backend.
    #[error("transport error: {0}")]
    Transport(String),

    /// Permanent: the backend rejected the request.
    #[error("request rejected by backend: {0}")]
    Request(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("quota failure: {0}")]
    Quota(String),

    #[error("run interrupted after {written} record(s)")]
    Interrupted { written: usize },

    #[error("image codec error: {0}")]
    Codec(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether a failed backend call may succeed if repeated.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport(_))
    }
}
