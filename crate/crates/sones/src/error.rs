use crate::probing::FrequencyViolation;

pub type Result<T> = std::result::Result<T, SonesError>;

#[derive(Debug, thiserror::Error)]
pub enum SonesError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch between operands")]
    ShapeMismatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("probing frequencies rejected ({} violation(s), first: {})",
            .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    InvalidFrequencies(Vec<FrequencyViolation>),

    #[error("quadrature did not converge (last refinement delta {delta:e})")]
    QuadratureNoConvergence { delta: f64 },

    #[error("state diverged (non-finite value) at t = {t}")]
    Divergence { t: f64 },

    #[error("no equilibrium found within the time cap (residual {residual:e})")]
    NoEquilibrium { residual: f64 },

    #[error("matrix is singular")]
    Singular,

    #[error("frequency search exhausted the given range")]
    SearchExhausted,

    #[error("eigenvalue computation failed")]
    EigenFailure,
}
