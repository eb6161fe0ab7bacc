use thiserror::Error;

/// Errors raised by the numerical and conformal routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("dimension constraint violated: {0}")]
    Dimension(String),
    #[error("score model is not fitted: {0}")]
    Unfitted(&'static str),
    #[error("gradient norm below threshold ({norm_sq:e})")]
    DegenerateGradient { norm_sq: f64 },
    #[error("state left the finite range")]
    NonFinite,
    #[error("singular linear system")]
    Singular,
    #[error("flow correction failed for batch member {index}")]
    CorrectionFailed { index: usize },
    #[error("sample {index} failed: {source}")]
    Sample { index: usize, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;
