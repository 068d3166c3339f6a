use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate joke_id `{0}`")]
    DuplicateJoke(String),
    #[error("unknown joke_id `{0}`")]
    UnknownJoke(String),
    #[error("invalid timestamp `{0}` (expected YYYY/MM/DD-HH:MM:SS)")]
    Timestamp(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("events are not sorted by timestamp at position {0}")]
    Unsorted(usize),
    #[error("degenerate dataset: {0}")]
    Degenerate(String),
    #[error("feature schema mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    Diverged { epoch: usize, batch: usize },
    #[error("not enough unheard jokes for user `{user}`: need {needed}, have {available}")]
    InsufficientNegatives {
        user: String,
        needed: usize,
        available: usize,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] jokerank_tensor::TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
