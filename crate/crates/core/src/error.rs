use thiserror::Error;

/// Errors raised by kernels, factorizations and Kriging updates.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum KrigingError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid point: {0}")]
    InvalidPoint(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A Cholesky pivot was not strictly positive. Usually caused by
    /// duplicated design points or a jitter that is too small.
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    /// The conditional variance at a new point is (numerically) zero.
    #[error("degenerate new point: conditional variance {variance:e}")]
    DegenerateNewPoint { variance: f64 },
}

pub type Result<T> = std::result::Result<T, KrigingError>;
