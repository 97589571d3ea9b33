//! Crate-wide error type.

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

    #[error("{path}:{line}: malformed record: {msg}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("duplicate id {id:?} at lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },

    #[error("corpus is empty: {0}")]
    EmptyCorpus(PathBuf),

    #[error("template error: {0}")]
    Template(String),

    #[error("sample {id:?} cannot serve as its own demonstration")]
    SelfDemonstration { id: String },

    #[error("unknown id {id:?}")]
    UnknownId { id: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero vector for id {id:?}: cosine undefined")]
    ZeroVector { id: String },

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("continuation tokenized to zero tokens")]
    EmptyContinuation,

    #[error("backend {backend:?}: {msg}")]
    Backend { backend: String, msg: String },

    #[error("judge reply unparsable after reprompt: {raw:?}")]
    JudgeUnparsable { raw: String },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn backend(backend: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Backend {
            backend: backend.into(),
            msg: msg.into(),
        }
    }

    /// True for failures of an external service (used for exit-code mapping).
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend { .. } | Error::JudgeUnparsable { .. })
    }
}
