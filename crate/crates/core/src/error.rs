use thiserror::Error;

/// Failures raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{what} is not invertible (reciprocal condition {rcond:.3e})")]
    Singular { what: &'static str, rcond: f64 },

    #[error("{what} is not Hermitian (residual {residual:.3e})")]
    NotHermitian { what: &'static str, residual: f64 },

    #[error("{what} violates unitarity (residual {residual:.3e})")]
    NotUnitary { what: &'static str, residual: f64 },

    #[error("contraction violated: norm {norm:.6} >= 1")]
    ContractionViolated { norm: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("integrator failure: {0}")]
    Integrator(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for failures that stem from numerical non-convergence rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. } | Error::Quadrature(_) | Error::Integrator(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
