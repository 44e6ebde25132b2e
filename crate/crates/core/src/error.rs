use thiserror::Error;

pub type Result<T> = std::result::Result<T, SmpError>;

#[derive(Debug, Error)]
pub enum SmpError {
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("convexity violation: rho^2 = {rho_sq} exceeds epsilon = {epsilon}")]
    Convexity { rho_sq: f64, epsilon: f64 },

    #[error("non-finite state for particle {particle} at step {step}")]
    NonFiniteState { particle: usize, step: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported model class: {0}")]
    UnsupportedClass(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("enumeration guard exceeded: {cardinality} controls (limit {limit})")]
    GuardExceeded { cardinality: u128, limit: u128 },

    #[error("derivative mismatch in {coefficient} at {point}: analytic {analytic}, finite difference {numeric}")]
    DerivativeMismatch {
        coefficient: String,
        point: String,
        analytic: f64,
        numeric: f64,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),
}

impl SmpError {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SmpError::NonFiniteState { .. }
                | SmpError::Numerical(_)
                | SmpError::NoConvergence { .. }
        )
    }
}
