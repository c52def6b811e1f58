use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("unknown polarity `{0}`")]
    UnknownPolarity(String),
    #[error("aspect `{aspect}` not found among the labels of sample {id}")]
    AspectNotFound { id: usize, aspect: String },
    #[error("sample {0} has no designated aspect (required for ATSC)")]
    MissingAspect(usize),
    #[error("need at least {required} candidates to form {k} positives and {k} negatives, got {got}")]
    TooFewCandidates {
        required: usize,
        got: usize,
        k: usize,
    },
    #[error("width mismatch: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error("length mismatch: {0} predictions vs {1} references")]
    LengthMismatch(usize, usize),
    #[error("gold polarity `none` is not valid for ATSC (position {0})")]
    NoneGold(usize),
    #[error("candidate index is stale: built at parameter version {built}, retriever is at {current}")]
    StaleIndex { built: u64, current: u64 },
    #[error("non-finite gradient in `{param}` (first bad entry {index})")]
    NonFiniteGradient { param: &'static str, index: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid template: {0}")]
    Template(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
