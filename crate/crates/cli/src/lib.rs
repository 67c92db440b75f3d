//! Config-driven experiment runner for the `adasdbo` simulator.
//!
//! A TOML [`ExperimentConfig`] names a problem, a topology and an
//! algorithm. [`run_single`] writes `<outdir>/<config-hash>/trace.csv` and
//! `summary.json`; [`run_sweep`] repeats that per sweep value and adds a
//! consolidated `sweep.csv`.

mod check;
mod config;
mod runner;

pub use check::{oracle_check, OracleReport};
pub use config::{
    parse_config, AlgorithmConfig, AlgorithmKind, ExperimentConfig, OracleSection, OutputConfig, OutputFormat,
    ProblemConfig, ProjectionSetting, QuadraticSection, SoftmaxSection, SweepConfig, SweepParam, SweepValue,
    SyntheticSection, TopologyConfig, TopologyKind,
};
pub use runner::{build_problem, run_single, run_sweep, RunSummary, SweepRow, SWEEP_CSV_HEADER};

use thiserror::Error;

/// Environment variable consulted for the output directory when no
/// `--outdir` flag is given.
pub const OUTDIR_ENV: &str = "ADASDBO_OUTDIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error(transparent)]
    Core(adasdbo::Error),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(adasdbo::Error::Divergence { .. }) => 3,
            CliError::Oracle(_) | CliError::Core(adasdbo::Error::OracleFailure { .. }) => 4,
            CliError::Io(_) | CliError::Core(adasdbo::Error::Io(_)) => 5,
            CliError::Core(adasdbo::Error::InvalidArgument(_) | adasdbo::Error::Construction(_)) => 2,
            CliError::Core(_) => 1,
        }
    }
}

impl From<adasdbo::Error> for CliError {
    fn from(e: adasdbo::Error) -> Self {
        match e {
            adasdbo::Error::OracleFailure { .. } => CliError::Oracle(e.to_string()),
            adasdbo::Error::Io(e) => CliError::Io(e.to_string()),
            e => CliError::Core(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
