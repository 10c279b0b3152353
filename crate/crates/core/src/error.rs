use alloc::string::String;

/// Errors produced by the forecasting core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("column `{0}` is entirely missing and cannot be filled")]
    Unfillable(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("layout mismatch: expected {expected} features, got {got}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("tuning failed: {0}")]
    Tuning(String),
    #[error("missing truth for {count} deliveries (first: {first})")]
    MissingTruth { count: usize, first: String },
    #[error("quantile grids or deliveries do not match: {0}")]
    GridMismatch(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
