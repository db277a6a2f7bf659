use thiserror::Error;

/// Every failure the solver pipeline can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    /// An argument lies outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),
    /// A documented precondition of an operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// User-supplied data is inconsistent or malformed.
    #[error("input error: {0}")]
    Input(String),
    /// A computed length exceeds the configured cap.
    #[error("overflow: {0}")]
    Overflow(String),
    /// The state left the admissible set; names the violated bound.
    #[error("admissibility lost: {0}")]
    Admissibility(String),
    /// The state is close to vacuum or a fractional power has a negative base.
    #[error("degenerate state: {0}")]
    Degenerate(String),
    /// A banded or dense factorisation hit a zero pivot.
    #[error("singular linear system (epsilon = {epsilon:e}, m = {modes}, pivot = {pivot:e})")]
    Singular { epsilon: f64, modes: usize, pivot: f64 },
    /// An iteration failed to converge.
    #[error("no convergence: {0}")]
    NonConvergence(String),
    /// An internal consistency check failed.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, SolverError>;
