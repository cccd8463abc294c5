use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate block: {0}")]
    DegenerateBlock(String),
    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("ellipticity optimizer did not converge (best theta {best_theta})")]
    ThetaNoConverge { best_theta: f64 },
    #[error("adapted q0 sandwich failed up to k0_digits = {0}")]
    AdaptationFailed(u32),
    #[error("Loewner order violated: smallest eigenvalue {0:e}")]
    OrderViolated(f64),
    #[error("cannot partition level {level} cube at level {k}")]
    BadPartition { level: u32, k: u32 },
    #[error("degenerate field at cell {cell:?}: smallest eigenvalue of symmetric part {value:e}")]
    DegenerateField { cell: Vec<i64>, value: f64 },
    #[error("padding too small: need {need}, have {have}")]
    PaddingTooSmall { need: usize, have: usize },
    #[error("cube outside field box")]
    OutOfBox,
    #[error("solver failed after {iterations} iterations (relative residual {residual:e})")]
    SolveFailed { iterations: usize, residual: f64 },
    #[error("inequality violated: {0}")]
    InequalityViolated(String),
    #[error("inadmissible Besov spec: {0}")]
    BadSpec(String),
    #[error("constraint violated at t = {t} (excess {excess:e})")]
    ConstraintViolated { t: f64, excess: f64 },
    #[error("insufficient signal for a convergence fit")]
    NoSignal,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
