use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Row {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidInput(String),

    /// A pluggable component broke its contract (e.g. a tagger returned the wrong number of tags).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Model weights, vocabularies or other required artifacts are missing.
    #[error("resource unavailable: {0}")]
    Resource(String),

    #[error("network error: {message} (retry later, or pre-populate the cache at {cache})")]
    Network { message: String, cache: PathBuf },

    #[error("backend `{0}` does not expose attention weights")]
    UnsupportedBackend(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Coarse category used by front-ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidInput(_) => ErrorKind::Usage,
            Error::Resource(_) | Error::Network { .. } => ErrorKind::Resource,
            Error::Io { .. }
            | Error::Row { .. }
            | Error::Format(_)
            | Error::Contract(_)
            | Error::UnsupportedBackend(_)
            | Error::Json(_) => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Resource,
}
