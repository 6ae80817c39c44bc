//! One module per experiment kind. Every experiment splits into independent
//! jobs that run on the rayon pool and are written out in job order.

pub mod audit;
pub mod gap;
pub mod nc;
pub mod network;

use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::artifacts::write_json;
use crate::config::{Experiment, RunConfig};
use crate::CliError;

pub const FAILURE_FILE: &str = "failure.json";
pub const METADATA_FILE: &str = "metadata.json";

/// A job that did not finish.
#[derive(Clone, Debug, Serialize)]
pub struct JobFailure {
    pub job: String,
    pub error: String,
}

pub fn execute(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = &cfg.output_dir;
    let extra = match cfg.experiment {
        Experiment::AxisA | Experiment::AxisB => gap::metadata(cfg),
        Experiment::MultiAgent | Experiment::Exploitability => network::metadata(cfg)?,
        Experiment::NcCheck | Experiment::OracleAudit => json!({}),
    };
    write_json(
        &dir.join(METADATA_FILE),
        &json!({
            "tool": "bidlab",
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg,
            "derived": extra,
        }),
    )?;
    let failures = match cfg.experiment {
        Experiment::AxisA | Experiment::AxisB => gap::run(cfg)?,
        Experiment::NcCheck => nc::run(cfg)?,
        Experiment::MultiAgent => network::run_multi(cfg)?,
        Experiment::Exploitability => network::run_exploitability(cfg)?,
        Experiment::OracleAudit => audit::run(cfg)?,
    };
    finish(dir, failures)
}

/// Writes or clears the failure report and maps failures to an error.
fn finish(dir: &Path, failures: Vec<JobFailure>) -> Result<(), CliError> {
    let path = dir.join(FAILURE_FILE);
    if failures.is_empty() {
        if path.exists() {
            std::fs::remove_file(&path)?;
        }
        return Ok(());
    }
    write_json(&path, &json!({ "failures": failures }))?;
    let list: Vec<String> = failures
        .iter()
        .map(|f| format!("{}: {}", f.job, f.error))
        .collect();
    Err(CliError::Runtime(format!(
        "{} job(s) failed; see {}: {}",
        failures.len(),
        path.display(),
        list.join("; ")
    )))
}
