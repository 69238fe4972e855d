use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
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

    #[error("vocabulary is empty: no token reached the minimum count")]
    EmptyVocabulary,

    #[error("document collection is empty")]
    EmptyCollection,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid label set: {0}")]
    InvalidLabels(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupt or incompatible file: {0}")]
    Format(String),

    #[error("vocabulary hash mismatch: expected {expected:016x}, found {found:016x}")]
    VocabularyMismatch { expected: u64, found: u64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
