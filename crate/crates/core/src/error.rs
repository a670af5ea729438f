use thiserror::Error;

/// Errors raised by the numeric, vision, router and loss modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("support mismatch at index {index}: p > 0 where q == 0")]
    SupportMismatch { index: usize },
    #[error("degenerate denominator {value:e} (must exceed {epsilon:e})")]
    DegenerateDenominator { value: f64, epsilon: f64 },
    #[error("percentile of an empty window")]
    EmptyWindow,
    #[error("loss mask selects no tokens")]
    NoLossTokens,
    #[error("response has no tokens")]
    EmptyResponse,
    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
