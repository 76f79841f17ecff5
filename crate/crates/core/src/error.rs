use thiserror::Error;

/// Errors raised by the estimation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A moment or design matrix could not be inverted.
    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The requested spline design would exceed the configured column cap.
    #[error("basis too large: {size} columns exceeds cap {cap}")]
    BasisTooLarge { size: usize, cap: usize },

    #[error("lasso did not converge after {iterations} iterations (kkt violation {kkt_violation:e})")]
    NonConvergence { iterations: usize, kkt_violation: f64 },

    /// The exogenous-variable estimator was called on data without `r` columns.
    #[error("dataset has no exogenous regressors")]
    MissingExogenous,

    /// The bracketed covariance difference of the specification test is not positive definite.
    #[error("inner covariance difference is not positive definite (min pivot {min_pivot:e})")]
    NonPositiveInner { min_pivot: f64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for failures of the numerical/statistical kind (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularMatrix(_) | Error::NonConvergence { .. } | Error::NonPositiveInner { .. }
        )
    }
}
