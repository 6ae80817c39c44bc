//! Multi-agent training on the network market and the exploitability
//! assessment built on it.

use std::path::Path;

use bidlab_core::market_network::{
    train_agents, DispatchResult, MultiAgentTraining, NetworkMarket,
};
use bidlab_core::validity::{
    exploitability_assess, AgentExploitability, AssessConfig, ExploitabilityReport,
};
use bidlab_core::PolicyParameters;
use rayon::prelude::*;
use serde_json::{json, Value};

use super::JobFailure;
use crate::artifacts::{num, write_csv, write_json};
use crate::config::RunConfig;
use crate::CliError;

pub const EXPLOIT_HEADER: [&str; 8] = [
    "agent_id",
    "baseline_profit",
    "br_profit",
    "delta_profit",
    "exploitability_rel",
    "exploitability_pct",
    "baseline_total_profit",
    "br_profile_total_profit",
];

fn market(cfg: &RunConfig, seed: u64) -> Result<NetworkMarket, CliError> {
    Ok(NetworkMarket::new(cfg.case()?, cfg.network.clone(), seed)?)
}

/// Cost exponents per seed.
pub fn metadata(cfg: &RunConfig) -> Result<Value, CliError> {
    let mut gammas = serde_json::Map::new();
    for &s in &cfg.seeds {
        gammas.insert(s.to_string(), json!(market(cfg, s)?.gammas));
    }
    Ok(json!({ "gammas_by_seed": gammas }))
}

fn train(
    cfg: &RunConfig,
    m: &NetworkMarket,
    seed: u64,
) -> bidlab_core::Result<(MultiAgentTraining, Vec<DispatchResult>)> {
    let learner = cfg.learner(cfg.algorithms[0], seed);
    let last = learner.episodes;
    let mut dispatch = Vec::with_capacity(m.config.periods);
    let t = train_agents(m, &learner, &mut |e, r| {
        if e == last {
            dispatch.push(r.clone());
        }
    })?;
    Ok((t, dispatch))
}

fn write_training(
    dir: &Path,
    t: &MultiAgentTraining,
    dispatch: &[DispatchResult],
) -> Result<(), CliError> {
    let n = t.params.len();
    let mut header = vec!["episode".to_string(), "total_slack".to_string()];
    header.extend((1..=n).map(|i| format!("profit_{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &dir.join("metrics.csv"),
        &header,
        t.metrics.iter().map(|m| {
            let mut row = vec![m.episode.to_string(), num(m.total_slack)];
            row.extend(m.profits.iter().map(|&p| num(p)));
            row
        }),
    )?;
    write_json(&dir.join("policies.json"), &t.params)?;
    write_json(&dir.join("dispatch_last_episode.json"), dispatch)?;
    Ok(())
}

pub fn run_multi(cfg: &RunConfig) -> Result<Vec<JobFailure>, CliError> {
    let markets = cfg
        .seeds
        .iter()
        .map(|&s| market(cfg, s))
        .collect::<Result<Vec<_>, _>>()?;
    let results: Vec<_> = cfg
        .seeds
        .par_iter()
        .zip(&markets)
        .map(|(&s, m)| train(cfg, m, s))
        .collect();
    let mut failures = Vec::new();
    for (&seed, res) in cfg.seeds.iter().zip(results) {
        match res {
            Ok((t, d)) => write_training(
                &cfg.output_dir.join("multi").join(format!("seed{seed}")),
                &t,
                &d,
            )?,
            Err(e) => failures.push(JobFailure {
                job: format!("multi_seed{seed}"),
                error: e.to_string(),
            }),
        }
    }
    Ok(failures)
}

pub fn load_policies(path: &Path) -> Result<Vec<PolicyParameters>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: line {}: {e}", path.display(), e.line())))
}

/// Baseline profile and the assessment for one seed.
fn assess(
    cfg: &RunConfig,
    m: &NetworkMarket,
    seed: u64,
) -> Result<ExploitabilityReport, JobFailure> {
    let fail = |e: String| JobFailure {
        job: format!("exploitability_seed{seed}"),
        error: e,
    };
    let baseline = match &cfg.exploitability.baseline_policies {
        Some(p) => load_policies(p).map_err(|e| fail(e.to_string()))?,
        None => {
            let (t, d) =
                train(cfg, m, seed).map_err(|e| fail(format!("baseline training: {e}")))?;
            write_training(
                &cfg.output_dir.join("baseline").join(format!("seed{seed}")),
                &t,
                &d,
            )
            .map_err(|e| fail(e.to_string()))?;
            t.params
        }
    };
    let x = &cfg.exploitability;
    let mut learner = cfg.learner(cfg.algorithms[0], seed);
    learner.episodes = x.br_episodes.unwrap_or(cfg.episodes);
    let agents: Vec<usize> = if x.agents.is_empty() {
        (0..m.n_agents()).collect()
    } else {
        x.agents.iter().map(|a| a - 1).collect()
    };
    // Agents are assessed independently; each one's seed depends only on its index.
    let rows: Vec<_> = agents
        .par_iter()
        .map(|&i| {
            let assess_cfg = AssessConfig {
                learner: learner.clone(),
                n_restarts: x.n_restarts,
                common_seeds: x.common_seeds.clone(),
                agents: vec![i],
                epsilon_pct: x.epsilon_pct,
                warm_start: x.warm_start,
            };
            exploitability_assess(m, &baseline, &assess_cfg)
                .map(|r| r.agents.into_iter().next().expect("one agent"))
        })
        .collect();
    let rows: Vec<AgentExploitability> = rows
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(|e| fail(e.to_string()))?;
    Ok(ExploitabilityReport::from_rows(rows, x.epsilon_pct))
}

pub fn run_exploitability(cfg: &RunConfig) -> Result<Vec<JobFailure>, CliError> {
    let markets = cfg
        .seeds
        .iter()
        .map(|&s| market(cfg, s))
        .collect::<Result<Vec<_>, _>>()?;
    let results: Vec<_> = cfg
        .seeds
        .par_iter()
        .zip(&markets)
        .map(|(&s, m)| assess(cfg, m, s))
        .collect();
    let mut failures = Vec::new();
    for (&seed, res) in cfg.seeds.iter().zip(results) {
        match res {
            Ok(report) => {
                write_json(
                    &cfg.output_dir
                        .join(format!("exploitability_seed{seed}.json")),
                    &report,
                )?;
                write_csv(
                    &cfg.output_dir
                        .join(format!("exploitability_seed{seed}.csv")),
                    &EXPLOIT_HEADER,
                    report.agents.iter().map(exploit_row),
                )?;
            }
            Err(f) => failures.push(f),
        }
    }
    crate::report::report_dir(&cfg.output_dir)?;
    Ok(failures)
}

pub fn exploit_row(a: &AgentExploitability) -> Vec<String> {
    vec![
        a.agent_id.to_string(),
        num(a.baseline_profit),
        num(a.br_profit),
        num(a.delta_profit),
        num(a.exploitability_rel),
        num(a.exploitability_pct),
        num(a.baseline_total_profit),
        num(a.br_profile_total_profit),
    ]
}
