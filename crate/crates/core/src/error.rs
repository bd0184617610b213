use thiserror::Error;

/// Errors raised by the statistical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("active-set solver did not converge within {pivots} pivots")]
    NonConvergence { pivots: usize },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("resampling plan is incompatible with the input: {0}")]
    IncompatiblePlan(String),

    #[error("subset of hypotheses must be nonempty and within range")]
    EmptySubset,

    #[error("procedure {0} requires a reference distribution")]
    MissingReference(&'static str),

    #[error("closed testing supports at most {max} hypotheses, got {k}")]
    TooManyHypotheses { k: usize, max: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
