use thiserror::Error;

/// Errors produced anywhere in the lab.
#[derive(Debug, Error)]
pub enum LabError {
    /// A caller broke an operation's precondition (dimension mismatch, empty input, bad pmf...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Adaptive quadrature could not reach the requested tolerance.
    #[error(
        "quadrature did not converge on [{lower}, {upper}]: error estimate {error_estimate:.3e} \
         > tolerance {tolerance:.3e} after {intervals} intervals"
    )]
    Quadrature {
        lower: f64,
        upper: f64,
        error_estimate: f64,
        tolerance: f64,
        intervals: usize,
    },

    /// Gradient descent left the sane parameter region.
    #[error("training diverged at round {round}, step {step}: |w| = {weight_norm:.3e} (limit {limit:.1e})")]
    Divergence {
        round: usize,
        step: usize,
        weight_norm: f64,
        limit: f64,
    },

    /// A randomized construction could not be completed.
    #[error("construction failed: {0}")]
    Construction(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn contract(msg: impl Into<String>) -> LabError {
    LabError::Contract(msg.into())
}
