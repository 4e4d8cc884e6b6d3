use std::path::PathBuf;

/// Errors produced by the rewriting engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),

    #[error("unknown document `{0}`")]
    UnknownDoc(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("query weights must be non-negative, got {0}")]
    NegativeWeight(f64),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("rewriter transport failed for prompt {prompt_hash}: {message}")]
    Transport {
        prompt_hash: String,
        message: String,
    },

    #[error("corrupt cache record {path}: {message}")]
    CacheCorrupt { path: PathBuf, message: String },

    #[error("bridge: {0}")]
    Bridge(String),

    #[error("reports cover different query sets; symmetric difference: {0:?}")]
    QuerySetMismatch(Vec<String>),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
