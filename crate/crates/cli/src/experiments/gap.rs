//! Single-node training runs that produce gap curves (axis-a and axis-b).

use std::collections::BTreeMap;

use bidlab_core::learn::{train_from, EpisodeMetrics};
use bidlab_core::market_single::SingleNodeEnv;
use bidlab_core::{Algorithm, MapMode, StepBidCurve};
use rayon::prelude::*;
use serde_json::{json, Value};

use super::JobFailure;
use crate::artifacts::{num, opt, write_csv};
use crate::config::RunConfig;
use crate::{report, CliError};

pub const CURVE_HEADER: [&str; 5] = ["episode", "profit", "oracle_profit", "gap", "ma10"];
pub const BID_HEADER: [&str; 5] = ["episode", "segment", "q_start", "q_end", "price"];

#[derive(Clone, Copy, Debug)]
pub struct GapJob {
    pub mode: MapMode,
    pub algorithm: Algorithm,
    pub seed: u64,
}

impl GapJob {
    pub fn key(&self) -> String {
        format!("{}_{}_seed{}", self.mode, self.algorithm, self.seed)
    }
}

pub fn jobs(cfg: &RunConfig) -> Vec<GapJob> {
    let mut out = Vec::new();
    for &mode in &cfg.modes {
        for &algorithm in &cfg.algorithms {
            for &seed in &cfg.seeds {
                out.push(GapJob {
                    mode,
                    algorithm,
                    seed,
                });
            }
        }
    }
    out
}

/// γ drawn for each seed, echoed into the metadata.
pub fn metadata(cfg: &RunConfig) -> Value {
    let gammas: BTreeMap<String, f64> = cfg
        .seeds
        .iter()
        .map(|&s| (s.to_string(), cfg.single_node.resolve_gamma(s)))
        .collect();
    json!({ "gamma_by_seed": gammas, "jobs": jobs(cfg).iter().map(GapJob::key).collect::<Vec<_>>() })
}

struct JobOutput {
    metrics: Vec<EpisodeMetrics>,
    bids: Vec<(usize, StepBidCurve)>,
}

fn run_job(cfg: &RunConfig, job: GapJob) -> bidlab_core::Result<JobOutput> {
    let gamma = cfg.single_node.resolve_gamma(job.seed);
    let mut env = SingleNodeEnv::new(cfg.single_node.clone(), job.mode, gamma)?;
    let learner = cfg.learner(job.algorithm, job.seed);
    let t_dump = cfg.bid_surface_period;
    let mut bids = Vec::with_capacity(learner.episodes);
    let result = train_from(&mut env, &learner, None, &mut |rec| {
        if rec.info.t == t_dump {
            bids.push((rec.episode, rec.info.curve.clone()));
        }
    })?;
    Ok(JobOutput {
        metrics: result.metrics,
        bids,
    })
}

pub fn run(cfg: &RunConfig) -> Result<Vec<JobFailure>, CliError> {
    let jobs = jobs(cfg);
    let results: Vec<_> = jobs.par_iter().map(|&j| run_job(cfg, j)).collect();
    let dir = &cfg.output_dir;
    let mut failures = Vec::new();
    for (job, res) in jobs.iter().zip(results) {
        match res {
            Ok(out) => {
                let key = job.key();
                write_csv(
                    &dir.join("curves").join(format!("{key}.csv")),
                    &CURVE_HEADER,
                    out.metrics.iter().map(|m| {
                        vec![
                            m.episode.to_string(),
                            num(m.profit),
                            num(m.oracle_profit),
                            opt(m.gap),
                            opt(m.ma10),
                        ]
                    }),
                )?;
                let rows = out.bids.iter().flat_map(|(e, c)| {
                    (0..c.segments()).map(move |i| {
                        vec![
                            e.to_string(),
                            (i + 1).to_string(),
                            num(c.breakpoints[i]),
                            num(c.breakpoints[i + 1]),
                            num(c.prices[i]),
                        ]
                    })
                });
                write_csv(
                    &dir.join("bids")
                        .join(format!("{key}_t{}.csv", cfg.bid_surface_period)),
                    &BID_HEADER,
                    rows,
                )?;
            }
            Err(e) => failures.push(JobFailure {
                job: job.key(),
                error: e.to_string(),
            }),
        }
    }
    // The summary is rebuilt from the CSVs just written, never from memory.
    report::report_dir(dir)?;
    Ok(failures)
}
