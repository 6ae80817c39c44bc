//! Experiment runner behind the `bidlab` binary.
//!
//! [`run`] executes one configuration and writes its artifacts; [`report`]
//! rebuilds summaries from a run directory's raw CSV and JSON files.

pub mod artifacts;
pub mod config;
pub mod experiments;
pub mod report;

use std::path::Path;

use thiserror::Error;

pub use config::{Experiment, RunConfig};
pub use report::ReportOutcome;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or invalid configuration. Exit status 1.
    #[error("configuration error: {0}")]
    Config(String),
    /// The experiment started but could not finish. Exit status 2.
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<bidlab_core::Error> for CliError {
    fn from(e: bidlab_core::Error) -> Self {
        match e {
            bidlab_core::Error::Config(m) | bidlab_core::Error::Case(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o: {e}"))
    }
}

/// Runs the configured experiment into `cfg.output_dir`.
///
/// Job failures leave the artifacts of the jobs that finished, plus
/// `failure.json`, and return [`CliError::Runtime`].
pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    pool.install(|| experiments::execute(cfg))
}

/// Summarizes a run directory; see [`report::report_dir`].
pub fn report(dir: &Path) -> Result<ReportOutcome, CliError> {
    report::report_dir(dir)
}
