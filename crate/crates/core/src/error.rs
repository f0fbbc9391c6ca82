use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite entries in {context}")]
    NonFinite { context: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero matrix has no singular triplet")]
    ZeroMatrix,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("iterate became non-finite at iteration {iteration}")]
    NumericalFailure { iteration: usize },

    #[error("{requested} trials is below the statistical floor of {floor}")]
    TooFewTrials { requested: usize, floor: usize },

    #[error("tail hypothesis violated at p = {p}, s = {s}: probability {observed} exceeds {allowed}")]
    HypothesisViolated {
        p: f64,
        s: f64,
        observed: f64,
        allowed: f64,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
