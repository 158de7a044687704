use thiserror::Error;

/// Errors produced by the analytic, spectral and testing layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input lies outside the domain where a closed form or estimator is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Shapes of matrices, paths or parameter lists disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Adaptive quadrature or an iterative solver ran out of budget.
    #[error("did not converge: {0}")]
    NonConvergence(String),

    /// A covariance matrix could not be factorized.
    #[error("factorization failed: {0}")]
    Factorization(String),

    /// An observed eigenvalue has no supercritical preimage under the bias map.
    #[error("spike {spike} not identifiable: observed eigenvalue {observed} lies inside the bulk")]
    NotIdentifiable { spike: usize, observed: f64 },

    /// A configuration value violates a documented constraint.
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
