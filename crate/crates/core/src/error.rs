use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("n-gram order {0} is outside 1..=4")]
    InvalidOrder(usize),

    #[error("tagger returned {got} tags for a sentence of {expected} tokens")]
    TaggerContractViolation { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("batch of {0} examples is too small (need at least 2)")]
    InvalidBatch(usize),

    #[error("requested {requested} samples but only {available} are stored")]
    InsufficientSamples { requested: usize, available: usize },

    #[error("need {requested} examples but the corpus has {available}")]
    InsufficientData { requested: usize, available: usize },

    #[error("validation cache is stale: cached model {cached:?}, current model {current}")]
    Cache { cached: Option<u64>, current: u64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("frequency query on an empty table")]
    EmptyTable,

    #[error("missing {path}; run `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: String },

    #[error("{path}: {message}")]
    ConfigFile { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
