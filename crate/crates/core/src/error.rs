use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unencodable text")]
    UnencodableText,

    #[error("embedding format error: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("missing embedding for clause {0}")]
    MissingEmbedding(String),

    #[error("empty contract rep for {0}")]
    EmptyContractRep(String),

    #[error("clause type {0} has no members in the source split")]
    EmptyClauseType(String),

    #[error("empty neighbor list")]
    EmptyNeighbors,

    #[error("unknown contract {0}")]
    UnknownContract(String),

    #[error("strategy {strategy} requires component {component}")]
    MissingComponent {
        strategy: &'static str,
        component: &'static str,
    },

    #[error("stale cache: expected fingerprint {expected}, found {found}")]
    StaleCache { expected: String, found: String },

    #[error("index is empty")]
    EmptyIndex,

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
