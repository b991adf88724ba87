use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FkError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid {field}: {reason}")]
    InvalidInput { field: &'static str, reason: String },

    #[error("strong B-condition violated at mode {mode}: (lambda + c0) * b = {value} < 1")]
    StrongBCondition { mode: usize, value: f64 },

    #[error("non-finite state on path {path} at step {step}")]
    Simulation { path: usize, step: usize },

    #[error("non-finite value in {context} on path {path} at step {step}")]
    Overflow {
        context: &'static str,
        path: usize,
        step: usize,
    },

    #[error("regression at step {step} is ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { step: usize, condition: f64 },

    #[error("grid misalignment: {0}")]
    GridMisalignment(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("Lipschitz audit failed for {what}: observed ratio {observed:.4e} exceeds declared {declared:.4e}")]
    LipschitzAudit {
        what: &'static str,
        observed: f64,
        declared: f64,
    },

    #[error("Picard iteration did not converge at time step {step} (residual {residual:.3e})")]
    PicardDivergence { step: usize, residual: f64 },

    #[error("outside oracle domain: {0}")]
    OracleDomain(String),

    #[error("unknown closed-form tag `{0}`")]
    UnknownTag(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for FkError {
    fn from(e: std::io::Error) -> Self {
        FkError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FkError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(FkError::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
