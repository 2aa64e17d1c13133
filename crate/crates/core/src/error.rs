use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("singular operator: pivot {pivot:e} at row {row} (threshold {threshold:e})")]
    SingularOperator { row: usize, pivot: f64, threshold: f64 },

    #[error("Newton solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: Box<Vec<f64>>,
    },

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("requested rank {requested} but only {achieved} singular values are numerically nonzero")]
    RankDeficient { requested: usize, achieved: usize },

    #[error("Jacobian data required for jacobian_weight > 0 but dataset has none")]
    MissingJacobian,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("evaluation failed for sample {index}: {source}")]
    SampleFailure {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { context, expected, got });
    }
    Ok(())
}
