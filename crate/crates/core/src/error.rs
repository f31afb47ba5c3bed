use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// State norm exceeded the divergence cap (or became non-finite).
    #[error("trajectory diverged at step {step}")]
    Diverged { step: usize },

    /// A Jacobian along the trajectory was singular.
    #[error("degenerate Jacobian at step {step}")]
    Degenerate { step: usize },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("pair (A, B) is not stabilizable")]
    NotStabilizable,

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("Riccati iterate exceeded ceiling {ceiling:e} at index {index}")]
    Unbounded { index: usize, ceiling: f64 },

    #[error("system has no unstable directions (no positive exponent, no origin modulus > 1)")]
    NoUnstableDirections,
}
