use thiserror::Error;

/// Errors raised by the planning library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("thrust direction is singular (|a + g e3| = {norm:.3e} m/s^2)")]
    SingularThrust { norm: f64 },
    #[error("piece duration {0} s is below the admissible floor")]
    InvalidDuration(f64),
    #[error("time {t} s outside trajectory span [0, {total}] s")]
    OutOfRange { t: f64, total: f64 },
    #[error("derivative stack has order {have}, need at least {need}")]
    StackTooShort { have: usize, need: usize },
    #[error("adjoint configuration is not H-consistent: {0}")]
    NotHConsistent(String),
    #[error("boundary state violates the actuation limits (max violation {0:.3e})")]
    InfeasibleBoundary(f64),
    #[error("optimizer stopped after {iterations} iterations without converging")]
    MaxIterations { iterations: usize },
    #[error("no piece budget produced a feasible converged solution")]
    AllAttemptsFailed,
}

pub type Result<T> = std::result::Result<T, Error>;
