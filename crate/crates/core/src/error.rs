//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("csv parse error at {path}: {message}")]
    Csv { path: String, message: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("range `{range}` has {len} time points, but windows need at least {needed} (input {input_len} + horizon {horizon})")]
    RangeTooShort {
        range: String,
        len: usize,
        needed: usize,
        input_len: usize,
        horizon: usize,
    },

    #[error("no neighbor entry for channel {channel}")]
    MissingNeighbors { channel: usize },

    #[error("top-K requires K < M (got K={k}, M={m})")]
    KTooLarge { k: usize, m: usize },

    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {message}")]
    BadOp { op: &'static str, message: String },

    #[error("gradient missing for parameter `{0}`; run backward first")]
    MissingGradient(String),

    #[error("weighted metrics undefined: sum of |truth| is zero")]
    ZeroTruthMass,

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged: loss is not finite at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("legacy batch of {elements} elements exceeds ceiling {ceiling}; reindex_off is only feasible at small M")]
    LegacyBatchTooLarge { elements: u64, ceiling: u64 },

    #[error("correlation engine and oracle disagree at ({i},{j}): {engine} vs {oracle}")]
    BenchMismatch {
        i: usize,
        j: usize,
        engine: f64,
        oracle: f64,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
