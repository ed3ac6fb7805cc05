//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid triple {field}: {reason}")]
    InvalidTriple { field: &'static str, reason: String },

    #[error("invalid example: {0}")]
    InvalidExample(String),

    #[error("invalid task spec: {0}")]
    InvalidTaskSpec(String),

    #[error("unknown task id `{id}`; known ids: {known}")]
    UnknownTask { id: String, known: String },

    #[error("pool has {have} distinct examples of class `{class}`, need {need}")]
    InsufficientPool {
        class: String,
        have: usize,
        need: usize,
    },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("cast error at example {index}: {source}")]
    Cast {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ingest error in {path}: {reason}")]
    Ingest { path: String, reason: String },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("pipeline stage error: expected {expected}, found {found}")]
    Stage { expected: String, found: String },

    #[error("generation exhausted {attempts} attempts for prompt {prompt:?}")]
    GenerationExhausted { prompt: String, attempts: u32 },

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("registry error: {0}")]
    Registry(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
