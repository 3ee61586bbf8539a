use thiserror::Error;

/// Errors raised by the simulator and learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("activation tape does not match the network it is applied to")]
    TapeMismatch,

    #[error("non-finite gradient rejected")]
    NonFiniteGradient,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate zero-power batch")]
    ZeroPowerBatch,

    #[error("value {value} outside the quantizer range [0, {upper}]")]
    OutOfRange { value: f64, upper: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("zero-variance loss batch")]
    ZeroVariance,

    #[error("likelihood model has not been fitted")]
    UnfittedModel,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
