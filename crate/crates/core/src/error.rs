use thiserror::Error;

/// Errors raised across planning, inference and control.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("feature `{feature}` failed at step {step}: {reason}")]
    Feature {
        step: isize,
        feature: String,
        reason: String,
    },

    #[error("non-finite value in feature `{feature}` at step {step}")]
    NonFinite { step: isize, feature: String },

    #[error("skeleton `{skeleton}` did not converge ({status})")]
    NotConverged { skeleton: String, status: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("projected Hessian is singular: smallest eigenvalue {min_eigenvalue:e} below threshold {threshold:e}")]
    Singular { min_eigenvalue: f64, threshold: f64 },

    #[error("policy construction failed at step {step}: {reason}")]
    Policy { step: usize, reason: String },

    #[error("constraint projection did not converge at step {step} (residual {residual:e})")]
    Projection { step: usize, residual: f64 },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
