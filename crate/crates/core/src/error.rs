use thiserror::Error;

/// Errors raised while building or evaluating discretizations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point outside chart domain: {0}")]
    Domain(String),

    #[error("singular Jacobian: {0}")]
    SingularJacobian(String),

    #[error("singular decoupling term at x = {0}")]
    SingularDecoupling(String),

    #[error("solver failed to converge after {iterations} iterations (residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("step relation is not affine (fit residual {residual:e})")]
    NotLinear { residual: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("degenerate convergence fit: {0}")]
    DegenerateFit(String),

    #[error("step size {0:e} fell below the minimum")]
    StepUnderflow(f64),

    #[error("maximum number of steps ({0}) exceeded")]
    MaxStepsExceeded(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for failures that come from the numerics (as opposed to bad input).
    pub fn is_numeric(&self) -> bool {
        !matches!(self, Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::LengthMismatch(..))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
