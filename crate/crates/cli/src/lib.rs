//! Experiment orchestration for the calibration laboratory.
//!
//! Experiments consume a strict JSON [`config::RunConfig`], write their
//! artifacts into a self-describing run directory
//! (`<out>/<timestamp>-<experiment>/` holding `config.json`,
//! `manifest.json`, `checkpoints/`, `reports/`), and emit every table as
//! both CSV and JSON. File writes are whole-file atomic. Identical configs
//! and master seeds reproduce bitwise-identical CSV artifacts.

pub mod config;
pub mod experiments;
pub mod report;
pub mod rundir;

/// Process exit codes: 2 invalid config, 3 invariant failure, 4 numerical
/// divergence.
#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("invariant failure: {0}")]
    Invariant(String),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunnerError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) => 2,
            RunnerError::Invariant(_) => 3,
            RunnerError::Divergence(_) => 4,
            RunnerError::Io(_) => 1,
        }
    }
}

impl From<prefcal::Error> for RunnerError {
    fn from(e: prefcal::Error) -> Self {
        match e {
            prefcal::Error::Divergence(msg) => RunnerError::Divergence(msg),
            prefcal::Error::InvalidInput(msg) | prefcal::Error::Parse(msg) => {
                RunnerError::Config(msg)
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, RunnerError>;
