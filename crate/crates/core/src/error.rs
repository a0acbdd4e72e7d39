use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Evaluation outside the domain of a formula (e.g. the kernel at the origin).
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter violates an admissibility constraint; the message names the constraint.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("quadrature failure in {what}: achieved error estimate {achieved:.3e} exceeds tolerance {requested:.3e}")]
    Quadrature {
        what: String,
        achieved: f64,
        requested: f64,
    },

    /// Principal-value sequence is not Cauchy.
    #[error("divergent truncated integrals: {0}")]
    Divergence(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        what: String,
        iterations: usize,
        residual: f64,
        /// Last iterate, when the failing routine has one.
        last: Option<Vec<f64>>,
    },

    #[error("functional is not coercive: {0}")]
    NonCoercive(String),

    #[error("mountain-pass path collapsed: {0}")]
    PathCollapse(String),

    #[error("shifted operator is not positive definite: {0}")]
    SpectralBound(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
