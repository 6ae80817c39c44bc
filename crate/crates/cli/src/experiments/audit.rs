//! Cross-checks the enumerated benchmark: against a second enumeration on
//! random `(D, γ)` instances, and against a brute-force best response on a
//! leading subset.

use bidlab_core::market_single::{CostModel, OpponentLadder};
use bidlab_core::oracle::{brute_force_best_response, optimal_profit, BruteForceResult};
use bidlab_core::rng;
use bidlab_core::OracleResult;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::JobFailure;
use crate::artifacts::{num, write_csv, write_json};
use crate::config::RunConfig;
use crate::CliError;

/// Best `(profit, price, quantity)` over ladder levels, each level evaluated
/// from scratch: the agent serves what the cheaper levels leave, priced at
/// the level, if its marginal-cost supply there covers the rest.
pub fn reenumerate(
    demand: f64,
    ladder: &OpponentLadder,
    cost: &CostModel,
) -> Option<(f64, f64, f64)> {
    let mut best: Option<(f64, f64, f64)> = None;
    for j in 0..ladder.prices.len() {
        let below: f64 = ladder.widths[..j].iter().sum();
        let price = ladder.prices[j];
        let q = demand - below;
        if q <= 0.0 || below + cost.q_mc(price) < demand {
            continue;
        }
        let profit = price * q - cost.total(q);
        if best.is_none_or(|b| profit > b.0) {
            best = Some((profit, price, q));
        }
    }
    best
}

#[derive(Clone, Debug, Serialize)]
pub struct Instance {
    pub index: usize,
    pub demand: f64,
    pub gamma: f64,
    pub oracle: OracleResult,
    pub matches_reenumeration: bool,
    pub brute_force: Option<BruteForceResult>,
    /// Brute-force profit minus the benchmark, on feasible instances.
    pub margin: Option<f64>,
    pub dominates: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct WorkedExample {
    pub demand: f64,
    pub gamma: f64,
    pub oracle: OracleResult,
    pub brute_force: BruteForceResult,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditSummary {
    pub instances: usize,
    pub reenumeration_mismatches: usize,
    pub brute_force_instances: usize,
    pub brute_force_feasible: usize,
    pub dominance_violations: usize,
    /// The grid can only approach a benchmark price from below, so dominance
    /// is checked up to `price_step · q*`.
    pub dominance_tolerance_rule: String,
    pub min_margin: Option<f64>,
    pub worked_example: WorkedExample,
    pub passed: bool,
}

fn check(cfg: &RunConfig, index: usize, demand: f64, gamma: f64) -> bidlab_core::Result<Instance> {
    let sn = &cfg.single_node;
    let a = &cfg.audit;
    let cost = CostModel::new(sn.cost_a, sn.cost_b, gamma, sn.q_max)?;
    let oracle = optimal_profit(demand, &sn.ladder, &cost);
    let matches_reenumeration = match reenumerate(demand, &sn.ladder, &cost) {
        None => !oracle.feasible,
        Some((pi, p, q)) => {
            oracle.feasible && oracle.pi_star == pi && oracle.p_star == p && oracle.q_star == q
        }
    };
    let brute_force = (index < a.brute_force_instances)
        .then(|| {
            brute_force_best_response(
                demand,
                &sn.ladder,
                &cost,
                a.price_step,
                a.q_step,
                sn.price_cap,
            )
        })
        .transpose()?;
    let margin = brute_force
        .filter(|_| oracle.feasible)
        .map(|b| b.profit - oracle.pi_star);
    let dominates = margin.map(|m| m >= -(a.price_step * oracle.q_star) - 1e-9);
    Ok(Instance {
        index,
        demand,
        gamma,
        oracle,
        matches_reenumeration,
        brute_force,
        margin,
        dominates,
    })
}

pub fn run(cfg: &RunConfig) -> Result<Vec<JobFailure>, CliError> {
    let a = &cfg.audit;
    let seed = cfg.seeds[0];
    let mut r = rng::derive(seed, "oracle-audit");
    let d = &cfg.single_node.demand;
    let draws: Vec<(f64, f64)> = (0..a.instances)
        .map(|_| {
            (
                r.random_range(d.clip_lo..d.clip_hi),
                r.random_range(1.0..2.0),
            )
        })
        .collect();
    let results: Vec<_> = draws
        .par_iter()
        .enumerate()
        .map(|(i, &(d, g))| check(cfg, i, d, g))
        .collect();
    let mut instances = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok(x) => instances.push(x),
            Err(e) => failures.push(JobFailure {
                job: format!("instance {i}"),
                error: e.to_string(),
            }),
        }
    }

    let sn = &cfg.single_node;
    let cost = CostModel::new(sn.cost_a, sn.cost_b, 1.0, sn.q_max)?;
    let worked_example = WorkedExample {
        demand: 530.0,
        gamma: 1.0,
        oracle: optimal_profit(530.0, &sn.ladder, &cost),
        brute_force: brute_force_best_response(
            530.0,
            &sn.ladder,
            &cost,
            a.example_price_step,
            a.example_q_step,
            sn.price_cap,
        )?,
    };

    let opt_row = |x: Option<f64>| x.map(num).unwrap_or_default();
    write_csv(
        &cfg.output_dir.join("audit").join("instances.csv"),
        &[
            "index",
            "demand",
            "gamma",
            "feasible",
            "pi_star",
            "p_star",
            "q_star",
            "matches_reenumeration",
            "bf_profit",
            "bf_price",
            "bf_quantity",
            "margin",
            "dominates",
        ],
        instances.iter().map(|x| {
            vec![
                x.index.to_string(),
                num(x.demand),
                num(x.gamma),
                x.oracle.feasible.to_string(),
                num(x.oracle.pi_star),
                num(x.oracle.p_star),
                num(x.oracle.q_star),
                x.matches_reenumeration.to_string(),
                opt_row(x.brute_force.map(|b| b.profit)),
                opt_row(x.brute_force.map(|b| b.price)),
                opt_row(x.brute_force.map(|b| b.quantity)),
                opt_row(x.margin),
                x.dominates.map(|d| d.to_string()).unwrap_or_default(),
            ]
        }),
    )?;
    let mismatches = instances
        .iter()
        .filter(|x| !x.matches_reenumeration)
        .count();
    let violations = instances
        .iter()
        .filter(|x| x.dominates == Some(false))
        .count();
    let summary = AuditSummary {
        instances: instances.len(),
        reenumeration_mismatches: mismatches,
        brute_force_instances: instances.iter().filter(|x| x.brute_force.is_some()).count(),
        brute_force_feasible: instances.iter().filter(|x| x.margin.is_some()).count(),
        dominance_violations: violations,
        dominance_tolerance_rule: format!("margin >= -{} * q_star", a.price_step),
        min_margin: instances.iter().filter_map(|x| x.margin).reduce(f64::min),
        worked_example,
        passed: failures.is_empty() && mismatches == 0 && violations == 0,
    };
    write_json(&cfg.output_dir.join("audit").join("summary.json"), &summary)?;
    Ok(failures)
}
