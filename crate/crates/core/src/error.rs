use thiserror::Error;

/// Crate-wide error type. Variants mirror the failure modes of the public
/// operations; messages name the violated constraint.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("rank error: {0}")]
    Rank(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("incompatible configs: {0}")]
    IncompatibleConfigs(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
