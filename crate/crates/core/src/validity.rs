//! Gap-curve statistics and the frozen-opponent exploitability harness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{best_response_train, moving_average, LearnerConfig, PolicyParameters};
use crate::market_network::{FrozenOpponentEnv, NetworkMarket};
use crate::rng;

/// Shortest gap series [`gap_statistics`] accepts.
pub const MIN_SERIES: usize = 20;
/// Slack on threshold comparisons, so a window averaging exactly 0.05 counts
/// as reaching 5% despite rounding in the sum.
const THRESHOLD_SLACK: f64 = 1e-12;

/// Summary of one gap curve. Gaps are fractions, not percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapStatistics {
    pub episodes: usize,
    /// Mean and population standard deviation over the last 10% of episodes.
    pub steady_state_mean: f64,
    pub steady_state_std: f64,
    /// First episode (1-based) whose trailing moving average is at most 10%.
    pub episode_to_10pct: Option<usize>,
    pub episode_to_5pct: Option<usize>,
    pub best_ma_gap: f64,
    /// Fraction of the last 10% of episodes with a raw gap of at most 10%.
    pub compliance_rate_last10: f64,
}

/// Length of the steady-state tail: the last 10% of episodes, at least one.
pub fn tail_len(n: usize) -> usize {
    n.div_ceil(10).max(1)
}

pub fn gap_statistics(series: &[f64], ma_window: usize) -> Result<GapStatistics> {
    if series.len() < MIN_SERIES.max(ma_window) || ma_window == 0 {
        return Err(Error::Data(format!(
            "need at least {MIN_SERIES} gaps and a positive window, got {}",
            series.len()
        )));
    }
    if let Some(i) = series.iter().position(|g| !g.is_finite()) {
        return Err(Error::Data(format!(
            "gap of episode {} is {}",
            i + 1,
            series[i]
        )));
    }
    let n = series.len();
    let tail = &series[n - tail_len(n)..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let var = tail.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / tail.len() as f64;
    let wrapped: Vec<Option<f64>> = series.iter().copied().map(Some).collect();
    let ma: Vec<f64> = moving_average(&wrapped, ma_window)
        .into_iter()
        .flatten()
        .collect();
    let first = |threshold: f64| {
        ma.iter()
            .position(|&m| m <= threshold + THRESHOLD_SLACK)
            .map(|i| i + ma_window)
    };
    Ok(GapStatistics {
        episodes: n,
        steady_state_mean: mean,
        steady_state_std: var.sqrt(),
        episode_to_10pct: first(0.10),
        episode_to_5pct: first(0.05),
        best_ma_gap: ma.iter().copied().fold(f64::INFINITY, f64::min),
        compliance_rate_last10: tail
            .iter()
            .filter(|&&g| g <= 0.10 + THRESHOLD_SLACK)
            .count() as f64
            / tail.len() as f64,
    })
}

/// One agent's deviation result; field names mirror the exploitability table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentExploitability {
    pub agent_id: usize,
    pub baseline_profit: f64,
    pub br_profit: f64,
    pub delta_profit: f64,
    pub exploitability_rel: f64,
    pub exploitability_pct: f64,
    pub baseline_total_profit: f64,
    pub br_profile_total_profit: f64,
    /// Set when best-response training failed; such rows are excluded from
    /// the maximum.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<String>,
}

impl AgentExploitability {
    /// Derives the delta columns; negative raw gains clamp to zero.
    pub fn from_profits(
        agent_id: usize,
        baseline: f64,
        br: f64,
        baseline_total: f64,
        br_total: f64,
    ) -> Self {
        let delta = (br - baseline).max(0.0);
        let rel = if delta == 0.0 {
            0.0
        } else {
            delta / baseline.abs()
        };
        Self {
            agent_id,
            baseline_profit: baseline,
            br_profit: br,
            delta_profit: delta,
            exploitability_rel: rel,
            exploitability_pct: 100.0 * rel,
            baseline_total_profit: baseline_total,
            br_profile_total_profit: br_total,
            failure: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploitabilityReport {
    pub agents: Vec<AgentExploitability>,
    /// `Ê = max_i Δ̂_i` over agents assessed without failure.
    pub exploitability: f64,
    pub max_pct: f64,
    pub mean_pct: f64,
    pub epsilon_pct: f64,
    /// Whether `max_pct ≤ epsilon_pct`.
    pub epsilon_stable: bool,
    pub warnings: Vec<String>,
}

impl ExploitabilityReport {
    pub fn from_rows(agents: Vec<AgentExploitability>, epsilon_pct: f64) -> Self {
        let ok: Vec<&AgentExploitability> = agents.iter().filter(|a| a.failure.is_none()).collect();
        let exploitability = ok.iter().map(|a| a.delta_profit).fold(0.0, f64::max);
        let max_pct = ok.iter().map(|a| a.exploitability_pct).fold(0.0, f64::max);
        let mean_pct = if ok.is_empty() {
            0.0
        } else {
            ok.iter().map(|a| a.exploitability_pct).sum::<f64>() / ok.len() as f64
        };
        let warnings = agents
            .iter()
            .filter_map(|a| {
                a.failure
                    .as_ref()
                    .map(|f| format!("agent {} excluded: {f}", a.agent_id))
            })
            .collect();
        Self {
            agents,
            exploitability,
            max_pct,
            mean_pct,
            epsilon_pct,
            epsilon_stable: max_pct <= epsilon_pct,
            warnings,
        }
    }
}

/// Settings of an exploitability assessment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssessConfig {
    pub learner: LearnerConfig,
    pub n_restarts: usize,
    /// Demand seeds shared by every baseline and deviated evaluation.
    pub common_seeds: Vec<u64>,
    /// 0-based agents to assess; all when empty.
    pub agents: Vec<usize>,
    pub epsilon_pct: f64,
    /// Start best-response training from the agent's baseline policy.
    pub warm_start: bool,
}

/// For each assessed agent: freeze the others, train a best response, and
/// compare both profiles on the same demand seeds.
///
/// Each agent's training seed is derived from the learner seed and the agent
/// index alone, so the result does not depend on assessment order.
pub fn exploitability_assess(
    market: &NetworkMarket,
    baseline: &[PolicyParameters],
    cfg: &AssessConfig,
) -> Result<ExploitabilityReport> {
    if cfg.common_seeds.is_empty() {
        return Err(Error::Config("common_seeds must not be empty".into()));
    }
    let n = market.n_agents();
    if baseline.len() != n {
        return Err(Error::Structural(format!(
            "{} baseline policies for {n} agents",
            baseline.len()
        )));
    }
    let agents: Vec<usize> = if cfg.agents.is_empty() {
        (0..n).collect()
    } else {
        cfg.agents.clone()
    };
    if let Some(a) = agents.iter().find(|&&a| a >= n) {
        return Err(Error::Config(format!(
            "agent index {a} out of range for {n} agents"
        )));
    }
    let base = market.evaluate_profile(baseline, &cfg.common_seeds)?;
    let base_total: f64 = base.iter().sum();
    let mut rows = Vec::with_capacity(agents.len());
    for &i in &agents {
        let learner = LearnerConfig {
            seed: rng::mix(cfg.learner.seed, &format!("best-response/{i}")),
            ..cfg.learner.clone()
        };
        let mut env = FrozenOpponentEnv::new(market, i, baseline)?;
        let init = cfg.warm_start.then(|| &baseline[i]);
        let row = match best_response_train(
            &mut env,
            &learner,
            cfg.n_restarts,
            &cfg.common_seeds,
            init,
        ) {
            Ok(br) => {
                let mut profile = baseline.to_vec();
                profile[i] = br.params;
                let dev = market.evaluate_profile(&profile, &cfg.common_seeds)?;
                AgentExploitability::from_profits(
                    i + 1,
                    base[i],
                    dev[i],
                    base_total,
                    dev.iter().sum(),
                )
            }
            Err(e) => AgentExploitability {
                failure: Some(e.to_string()),
                ..AgentExploitability::from_profits(i + 1, base[i], base[i], base_total, base_total)
            },
        };
        rows.push(row);
    }
    Ok(ExploitabilityReport::from_rows(rows, cfg.epsilon_pct))
}
