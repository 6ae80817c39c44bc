//! Episode loop, evaluation and best-response restarts.

use serde::{Deserialize, Serialize};

use super::ddpg::DdpgLearner;
use super::env::{Env, StepInfo};
use super::on_policy::OnPolicyLearner;
use super::policy::PolicyParameters;
use super::{Algorithm, LearnerConfig};
use crate::error::{Error, Result};
use crate::oracle::daily_gap;
use crate::param_maps::{DpmpConfig, MapMode, UnitBoxAction};
use crate::rng::{self, SimRng};

/// Moving-average window for gap curves.
pub const MA_WINDOW: usize = 10;

/// A learner driven one step at a time by [`train_from`].
pub trait Learner {
    /// Exploratory unit-box action, flat `[u_q, u_p]`.
    fn act(&mut self, obs: &[f64], rng: &mut SimRng) -> Result<Vec<f64>>;
    /// Outcome of the last [`act`](Learner::act).
    fn record(&mut self, reward: f64, next_obs: &[f64], done: bool);
    fn end_episode(&mut self, episode: usize, rng: &mut SimRng) -> Result<()>;
    fn parameters(&self) -> PolicyParameters;
}

pub fn make_learner(
    cfg: &LearnerConfig,
    env: &dyn Env,
    init: Option<&PolicyParameters>,
    rng: &mut SimRng,
) -> Result<Box<dyn Learner>> {
    make_learner_for(
        cfg,
        env.obs_dim(),
        env.segments(),
        env.mode(),
        env.map_config(),
        init,
        rng,
    )
}

/// As [`make_learner`], from the environment's shape alone.
pub fn make_learner_for(
    cfg: &LearnerConfig,
    obs_dim: usize,
    segments: usize,
    mode: MapMode,
    map_cfg: &DpmpConfig,
    init: Option<&PolicyParameters>,
    rng: &mut SimRng,
) -> Result<Box<dyn Learner>> {
    cfg.check()?;
    Ok(match cfg.algorithm {
        Algorithm::Ppo | Algorithm::A2c => {
            Box::new(OnPolicyLearner::new(cfg, obs_dim, 2 * segments, init, rng)?)
        }
        Algorithm::Ddpg => Box::new(DdpgLearner::new(
            cfg, obs_dim, segments, mode, map_cfg, init, rng,
        )?),
    })
}

/// Per-episode training record. Episodes are numbered from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub profit: f64,
    /// Sum of benchmark profits over periods that have one.
    pub oracle_profit: f64,
    pub gap: Option<f64>,
    /// Trailing mean of the last [`MA_WINDOW`] gaps, once that many exist.
    pub ma10: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub params: PolicyParameters,
    pub metrics: Vec<EpisodeMetrics>,
}

/// One executed step, passed to the observer of [`train_from`].
#[derive(Clone, Copy, Debug)]
pub struct StepRecord<'a> {
    pub episode: usize,
    pub info: &'a StepInfo,
}

/// Seed of episode `e` (1-based) for a run seeded with `seed`.
pub fn episode_seed(seed: u64, e: usize) -> u64 {
    rng::mix(seed, &format!("episode/{e}"))
}

/// Trailing simple moving average; `None` until `window` values exist or when
/// any value in the window is missing.
pub fn moving_average(xs: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    (0..xs.len())
        .map(|i| {
            if i + 1 < window {
                return None;
            }
            let w = &xs[i + 1 - window..=i];
            w.iter()
                .copied()
                .sum::<Option<f64>>()
                .map(|s| s / window as f64)
        })
        .collect()
}

pub fn train(env: &mut dyn Env, config: &LearnerConfig) -> Result<TrainResult> {
    train_from(env, config, None, &mut |_| {})
}

/// Trains for `config.episodes` episodes, optionally warm-started from `init`.
///
/// Reproducible from `config.seed`: the learner stream and every episode's
/// exogenous draws are derived from it.
pub fn train_from(
    env: &mut dyn Env,
    config: &LearnerConfig,
    init: Option<&PolicyParameters>,
    observer: &mut dyn FnMut(StepRecord),
) -> Result<TrainResult> {
    let mut rng = rng::derive(config.seed, "learner");
    let mut learner = make_learner(config, env, init, &mut rng)?;
    let mut metrics: Vec<EpisodeMetrics> = Vec::with_capacity(config.episodes);
    let mut gaps: Vec<Option<f64>> = Vec::with_capacity(config.episodes);
    let mut periods = Vec::with_capacity(env.horizon());
    for e in 1..=config.episodes {
        let mut obs = env.reset(episode_seed(config.seed, e))?;
        periods.clear();
        let mut profit = 0.0;
        loop {
            let u = learner.act(&obs, &mut rng)?;
            let tr = env.step(&UnitBoxAction::from_flat(&u)?)?;
            learner.record(tr.reward, &tr.obs, tr.done);
            observer(StepRecord {
                episode: e,
                info: &tr.info,
            });
            profit += tr.info.profit;
            periods.push((tr.info.oracle_profit, tr.info.profit));
            obs = tr.obs;
            if tr.done {
                break;
            }
        }
        learner.end_episode(e, &mut rng).map_err(|err| match err {
            Error::Divergence(m) => Error::Divergence(format!("episode {e}: {m}")),
            other => other,
        })?;
        let gap = daily_gap(&periods, config.gap_aggregation);
        gaps.push(gap);
        let ma10 = if gaps.len() >= MA_WINDOW {
            gaps[gaps.len() - MA_WINDOW..]
                .iter()
                .copied()
                .sum::<Option<f64>>()
                .map(|s| s / MA_WINDOW as f64)
        } else {
            None
        };
        let oracle_profit = periods.iter().filter_map(|p| p.0).sum();
        metrics.push(EpisodeMetrics {
            episode: e,
            profit,
            oracle_profit,
            gap,
            ma10,
        });
    }
    Ok(TrainResult {
        params: learner.parameters(),
        metrics,
    })
}

/// Profit and gap of a policy averaged over `seeds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean_profit: f64,
    pub mean_gap: Option<f64>,
    pub profits: Vec<f64>,
}

/// Runs one episode per seed. Stochastic policies sample from a stream
/// derived from the episode seed, so results depend only on `(params, seeds)`.
/// Policies without a log-std always act deterministically.
pub fn evaluate(
    env: &mut dyn Env,
    params: &PolicyParameters,
    seeds: &[u64],
    deterministic: bool,
    how: crate::oracle::GapAggregation,
) -> Result<Evaluation> {
    if seeds.is_empty() {
        return Err(Error::Config("evaluation needs at least one seed".into()));
    }
    let stochastic = !deterministic && !params.log_std.is_empty();
    let mut profits = Vec::with_capacity(seeds.len());
    let mut gaps = Vec::new();
    let mut periods = Vec::with_capacity(env.horizon());
    for &s in seeds {
        let mut rng = rng::derive(s, "evaluate");
        let mut obs = env.reset(s)?;
        periods.clear();
        let mut total = 0.0;
        loop {
            let u = if stochastic {
                params.sample(&obs, &mut rng)?.u
            } else {
                params.deterministic(&obs)?
            };
            let tr = env.step(&UnitBoxAction::from_flat(&u)?)?;
            total += tr.info.profit;
            periods.push((tr.info.oracle_profit, tr.info.profit));
            obs = tr.obs;
            if tr.done {
                break;
            }
        }
        profits.push(total);
        if let Some(g) = daily_gap(&periods, how) {
            gaps.push(g);
        }
    }
    let mean_profit = profits.iter().sum::<f64>() / profits.len() as f64;
    let mean_gap = (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64);
    Ok(Evaluation {
        mean_profit,
        mean_gap,
        profits,
    })
}

#[derive(Clone, Debug)]
pub struct BestResponse {
    pub params: PolicyParameters,
    /// Evaluation payoff of the selected restart.
    pub payoff: f64,
    pub selected: usize,
    /// Per-restart payoff; `None` for restarts that failed.
    pub restart_payoffs: Vec<Option<f64>>,
    pub failures: Vec<String>,
}

/// Seed of restart `r`; restart 0 keeps the configured seed.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        rng::mix(seed, &format!("restart/{r}"))
    }
}

/// Trains `n_restarts` times and keeps the policy with the highest
/// deterministic evaluation payoff on `eval_seeds`.
pub fn best_response_train(
    env: &mut dyn Env,
    config: &LearnerConfig,
    n_restarts: usize,
    eval_seeds: &[u64],
    init: Option<&PolicyParameters>,
) -> Result<BestResponse> {
    if n_restarts == 0 {
        return Err(Error::Config("n_restarts must be positive".into()));
    }
    let mut best: Option<(PolicyParameters, f64, usize)> = None;
    let mut restart_payoffs = Vec::with_capacity(n_restarts);
    let mut failures = Vec::new();
    for r in 0..n_restarts {
        let cfg = LearnerConfig {
            seed: restart_seed(config.seed, r),
            ..config.clone()
        };
        let outcome = train_from(env, &cfg, init, &mut |_| {}).and_then(|t| {
            Ok((
                evaluate(env, &t.params, eval_seeds, true, cfg.gap_aggregation)?.mean_profit,
                t.params,
            ))
        });
        match outcome {
            Ok((payoff, params)) => {
                restart_payoffs.push(Some(payoff));
                if best.as_ref().is_none_or(|b| payoff > b.1) {
                    best = Some((params, payoff, r));
                }
            }
            Err(e) => {
                restart_payoffs.push(None);
                failures.push(format!("restart {r}: {e}"));
            }
        }
    }
    match best {
        Some((params, payoff, selected)) => Ok(BestResponse {
            params,
            payoff,
            selected,
            restart_payoffs,
            failures,
        }),
        None => Err(Error::Divergence(format!(
            "all restarts failed: {}",
            failures.join("; ")
        ))),
    }
}
