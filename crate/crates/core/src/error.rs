use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The arrival vector lies outside the coded service capacity region.
    #[error("CODED_INFEASIBLE: {0}")]
    CodedInfeasible(String),

    /// A routing policy overloads at least one server class.
    #[error("policy is not stabilizing: max per-server load {max_load}")]
    NotStabilizing { max_load: f64 },

    /// The simulated occupancy crossed the configured cap.
    #[error("UNSTABLE: {jobs} jobs in system at t={time:.3}")]
    Unstable { time: f64, jobs: usize },

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
