use thiserror::Error;

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

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("diverged at round {round} (agent {agent}): {reason}")]
    Divergence { round: usize, agent: usize, reason: String },

    #[error("oracle failure in {stage}: {reason} (residual {residual:e})")]
    OracleFailure {
        stage: &'static str,
        reason: String,
        residual: f64,
    },

    #[error("metric not supported by this problem: {0}")]
    UnsupportedMetric(&'static str),

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { context, expected, got })
    }
}
