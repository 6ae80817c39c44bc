//! Single-node uniform-price benchmark market.
//!
//! One learning agent bids a K-segment curve against a fixed 10-segment
//! opponent ladder. Demand follows a daily sine with Gaussian noise. Clearing
//! is merit order with the marginal segment setting a uniform price.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bid_domain::StepBidCurve;
use crate::error::{Error, Result};
use crate::learn::{Env, StepInfo, Transition};
use crate::oracle;
use crate::param_maps::{h_mode, DpmpConfig, MapMode, UnitBoxAction};
use crate::rng::{self, SimRng};

/// Points of the marginal-cost grid.
pub const COST_GRID_POINTS: usize = 101;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandProcess {
    pub mean_level: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub noise_std: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub periods: usize,
}

impl Default for DemandProcess {
    fn default() -> Self {
        Self {
            mean_level: 500.0,
            amplitude: 300.0,
            phase: -PI / 2.0,
            noise_std: 25.0,
            clip_lo: 0.0,
            clip_hi: 1000.0,
            periods: 96,
        }
    }
}

impl DemandProcess {
    /// Noise-free demand at period `t`, clipped.
    pub fn mean(&self, t: usize) -> f64 {
        self.shape(t).clamp(self.clip_lo, self.clip_hi)
    }

    fn shape(&self, t: usize) -> f64 {
        self.mean_level
            + self.amplitude * (2.0 * PI * t as f64 / self.periods as f64 + self.phase).sin()
    }

    pub fn sample(&self, t: usize, rng: &mut SimRng) -> Result<f64> {
        if t >= self.periods {
            return Err(Error::Domain(format!(
                "period {t} outside 0..{}",
                self.periods
            )));
        }
        let noise = if self.noise_std > 0.0 {
            Normal::new(0.0, self.noise_std)
                .map_err(|e| Error::Config(e.to_string()))?
                .sample(rng)
        } else {
            0.0
        };
        Ok((self.shape(t) + noise).clamp(self.clip_lo, self.clip_hi))
    }
}

/// `MC(q) = a + b (q/q_max)^γ` on an equally spaced grid, with the total cost
/// accumulated by trapezoids.
///
/// Between grid points MC is interpolated linearly and `C` is its exact
/// integral, which agrees with the trapezoid sums at the nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub q_max: f64,
    step: f64,
    mc: Vec<f64>,
    cost: Vec<f64>,
}

impl CostModel {
    pub fn new(a: f64, b: f64, gamma: f64, q_max: f64) -> Result<Self> {
        if !(q_max > 0.0 && b > 0.0 && gamma > 0.0)
            || ![a, b, gamma, q_max].iter().all(|x| x.is_finite())
        {
            return Err(Error::Config(format!(
                "invalid cost model a={a} b={b} gamma={gamma} q_max={q_max}"
            )));
        }
        let n = COST_GRID_POINTS - 1;
        let step = q_max / n as f64;
        let mc: Vec<f64> = (0..=n)
            .map(|i| a + b * (i as f64 / n as f64).powf(gamma))
            .collect();
        let mut cost = vec![0.0; n + 1];
        for i in 1..=n {
            cost[i] = cost[i - 1] + 0.5 * (mc[i] + mc[i - 1]) * step;
        }
        Ok(Self {
            a,
            b,
            gamma,
            q_max,
            step,
            mc,
            cost,
        })
    }

    /// The single-node agent: `a = 20`, `b = 300`.
    pub fn benchmark(gamma: f64, q_max: f64) -> Result<Self> {
        Self::new(20.0, 300.0, gamma, q_max)
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..COST_GRID_POINTS)
            .map(|i| i as f64 * self.step)
            .collect()
    }

    pub fn mc_table(&self) -> &[f64] {
        &self.mc
    }

    pub fn cost_table(&self) -> &[f64] {
        &self.cost
    }

    fn locate(&self, q: f64) -> (usize, f64) {
        let q = q.clamp(0.0, self.q_max);
        let i = ((q / self.step) as usize).min(COST_GRID_POINTS - 2);
        (i, q - i as f64 * self.step)
    }

    /// Interpolated marginal cost; `q` is clamped to `[0, q_max]`.
    pub fn marginal(&self, q: f64) -> f64 {
        let (i, d) = self.locate(q);
        self.mc[i] + (self.mc[i + 1] - self.mc[i]) * d / self.step
    }

    /// Total cost; `q` is clamped to `[0, q_max]`.
    pub fn total(&self, q: f64) -> f64 {
        let (i, d) = self.locate(q);
        let slope = (self.mc[i + 1] - self.mc[i]) / self.step;
        self.cost[i] + self.mc[i] * d + 0.5 * slope * d * d
    }

    /// `sup{q ∈ [0, q_max] : MC(q) ≤ p}` on the interpolated curve.
    pub fn q_mc(&self, p: f64) -> f64 {
        if p < self.mc[0] {
            return 0.0;
        }
        let last = COST_GRID_POINTS - 1;
        if p >= self.mc[last] {
            return self.q_max;
        }
        // Last node with MC ≤ p; MC is strictly increasing.
        let i = self.mc.partition_point(|&m| m <= p) - 1;
        let frac = (p - self.mc[i]) / (self.mc[i + 1] - self.mc[i]);
        (i as f64 + frac) * self.step
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpponentLadder {
    pub widths: Vec<f64>,
    pub prices: Vec<f64>,
}

impl Default for OpponentLadder {
    fn default() -> Self {
        Self {
            widths: vec![100.0; 10],
            prices: (0..10).map(|j| 20.0 + 5.0 * j as f64).collect(),
        }
    }
}

impl OpponentLadder {
    pub fn total(&self) -> f64 {
        self.widths.iter().sum()
    }

    pub fn check(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.len() != self.prices.len() {
            return Err(Error::Config(
                "opponent ladder needs equal nonzero widths and prices".into(),
            ));
        }
        if self.widths.iter().any(|w| !(*w > 0.0)) || self.prices.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::Config(
                "opponent ladder needs positive widths and nondecreasing prices".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Participant {
    Agent,
    Opponent,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClearingOutcome {
    pub price: f64,
    pub agent_dispatch: f64,
    pub opponent_dispatch: f64,
    pub agent_cost: f64,
    pub agent_profit: f64,
    pub marginal: Participant,
    pub unserved: bool,
}

/// Merit-order clearing.
///
/// Segments are taken in ascending price; at equal price the opponent goes
/// first. The last segment with positive dispatch sets the price. With zero
/// demand the lowest offered price is reported. Unmet demand sets `price_cap`.
pub fn clear(
    bid: &StepBidCurve,
    ladder: &OpponentLadder,
    demand: f64,
    cost: &CostModel,
    price_cap: f64,
) -> Result<ClearingOutcome> {
    if !(demand >= 0.0) {
        return Err(Error::Domain(format!(
            "demand must be nonnegative, got {demand}"
        )));
    }
    if ladder.prices.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain(
            "opponent ladder prices must be nondecreasing".into(),
        ));
    }
    if bid.prices.windows(2).any(|w| w[1] < w[0]) {
        // Reorder a non-monotone curve's segments by price (stable), keeping widths.
        let mut order: Vec<usize> = (0..bid.segments()).collect();
        order.sort_by(|&a, &b| bid.prices[a].total_cmp(&bid.prices[b]));
        let mut breakpoints = vec![0.0];
        for &i in &order {
            breakpoints.push(breakpoints.last().unwrap() + bid.width(i));
        }
        let sorted = StepBidCurve {
            breakpoints,
            prices: order.iter().map(|&i| bid.prices[i]).collect(),
            q_max: bid.q_max,
            p_min: bid.p_min,
            p_max: bid.p_max,
        };
        return clear(&sorted, ladder, demand, cost, price_cap);
    }

    let n_opp = ladder.prices.len();
    let k = bid.segments();
    let (mut i, mut j) = (0, 0);
    let mut remaining = demand;
    let mut agent = 0.0;
    let mut opponent = 0.0;
    let mut price = f64::NAN;
    let mut marginal = Participant::None;
    loop {
        while i < k && bid.width(i) <= 0.0 {
            i += 1;
        }
        // Opponent first at equal price.
        let take_opponent = match (j < n_opp, i < k) {
            (false, false) => break,
            (true, false) => true,
            (false, true) => false,
            (true, true) => ladder.prices[j] <= bid.prices[i],
        };
        let (p, w) = if take_opponent {
            (ladder.prices[j], ladder.widths[j])
        } else {
            (bid.prices[i], bid.width(i))
        };
        if price.is_nan() {
            // Lowest offered price, reported when nothing is dispatched.
            price = p;
        }
        if remaining <= 0.0 {
            break;
        }
        let take = w.min(remaining);
        remaining -= take;
        price = p;
        if take_opponent {
            opponent += take;
            marginal = Participant::Opponent;
            j += 1;
        } else {
            agent += take;
            marginal = Participant::Agent;
            i += 1;
        }
    }
    let unserved = remaining > 0.0;
    if unserved || price.is_nan() {
        price = price_cap;
    }
    let agent_cost = cost.total(agent);
    Ok(ClearingOutcome {
        price,
        agent_dispatch: agent,
        opponent_dispatch: opponent,
        agent_cost,
        agent_profit: price * agent - agent_cost,
        marginal,
        unserved,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleNodeConfig {
    pub demand: DemandProcess,
    pub ladder: OpponentLadder,
    pub segments: usize,
    pub q_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub price_cap: f64,
    pub k_scale: f64,
    pub alpha: f64,
    pub cost_a: f64,
    pub cost_b: f64,
    /// Cost exponent; drawn from Uniform(1,2) by [`SingleNodeConfig::resolve_gamma`] when absent.
    pub gamma: Option<f64>,
}

impl Default for SingleNodeConfig {
    fn default() -> Self {
        Self {
            demand: DemandProcess::default(),
            ladder: OpponentLadder::default(),
            segments: 10,
            q_max: 1000.0,
            p_min: 0.0,
            p_max: 1000.0,
            price_cap: 1000.0,
            k_scale: 0.05,
            alpha: 1.0,
            cost_a: 20.0,
            cost_b: 300.0,
            gamma: None,
        }
    }
}

impl SingleNodeConfig {
    pub fn map_config(&self) -> DpmpConfig {
        DpmpConfig {
            k_scale: self.k_scale,
            alpha: self.alpha,
            q_max: self.q_max,
            p_min: self.p_min,
            p_max: self.p_max,
        }
    }

    /// γ from the config, or one Uniform(1,2) draw from the master seed.
    pub fn resolve_gamma(&self, seed: u64) -> f64 {
        self.gamma
            .unwrap_or_else(|| rng::derive(seed, "cost-gamma").random_range(1.0..2.0))
    }
}

/// Episodic environment around [`clear`].
///
/// Observation: `(sin(2πt/T), cos(2πt/T), D_{t−1}/1000)`. Before the first
/// period the noise-free demand of period `T−1` stands in for `D_{−1}`.
pub struct SingleNodeEnv {
    pub config: SingleNodeConfig,
    pub mode: MapMode,
    pub cost: CostModel,
    map_cfg: DpmpConfig,
    demands: Vec<f64>,
    t: usize,
}

impl SingleNodeEnv {
    pub fn new(config: SingleNodeConfig, mode: MapMode, gamma: f64) -> Result<Self> {
        config.ladder.check()?;
        if config.segments == 0 || config.demand.periods == 0 {
            return Err(Error::Config(
                "segments and periods must be positive".into(),
            ));
        }
        let cost = CostModel::new(config.cost_a, config.cost_b, gamma, config.q_max)?;
        let map_cfg = config.map_config();
        map_cfg.check()?;
        Ok(Self {
            config,
            mode,
            cost,
            map_cfg,
            demands: Vec::new(),
            t: 0,
        })
    }

    pub fn period(&self) -> usize {
        self.t
    }

    pub fn demands(&self) -> &[f64] {
        &self.demands
    }

    fn observation(&self) -> Vec<f64> {
        let periods = self.config.demand.periods;
        let phase = 2.0 * PI * self.t as f64 / periods as f64;
        let prev = if self.t == 0 {
            self.config.demand.mean(periods - 1)
        } else {
            self.demands[self.t - 1]
        };
        vec![phase.sin(), phase.cos(), prev / 1000.0]
    }

    /// Clears one period and returns the full outcome alongside the transition.
    pub fn step_outcome(&mut self, u: &UnitBoxAction) -> Result<(Transition, ClearingOutcome)> {
        if self.t >= self.demands.len() {
            return Err(Error::Domain("episode finished; call reset".into()));
        }
        let curve = h_mode(u, self.mode, &self.map_cfg)?;
        let demand = self.demands[self.t];
        let outcome = clear(
            &curve,
            &self.config.ladder,
            demand,
            &self.cost,
            self.config.price_cap,
        )?;
        let oracle = oracle::optimal_profit(demand, &self.config.ladder, &self.cost);
        let info = StepInfo {
            t: self.t,
            demand,
            price: outcome.price,
            dispatch: outcome.agent_dispatch,
            profit: outcome.agent_profit,
            oracle_profit: oracle.feasible.then_some(oracle.pi_star),
            curve,
        };
        self.t += 1;
        let done = self.t == self.demands.len();
        let obs = if done {
            vec![0.0; 3]
        } else {
            self.observation()
        };
        Ok((
            Transition {
                obs,
                reward: outcome.agent_profit,
                done,
                info,
            },
            outcome,
        ))
    }
}

impl Env for SingleNodeEnv {
    fn obs_dim(&self) -> usize {
        3
    }

    fn segments(&self) -> usize {
        self.config.segments
    }

    fn horizon(&self) -> usize {
        self.config.demand.periods
    }

    fn mode(&self) -> MapMode {
        self.mode
    }

    fn map_config(&self) -> &DpmpConfig {
        &self.map_cfg
    }

    fn reset(&mut self, episode_seed: u64) -> Result<Vec<f64>> {
        let mut r = rng::seeded(episode_seed);
        let d = &self.config.demand;
        self.demands = (0..d.periods)
            .map(|t| d.sample(t, &mut r))
            .collect::<Result<_>>()?;
        self.t = 0;
        Ok(self.observation())
    }

    fn step(&mut self, u: &UnitBoxAction) -> Result<Transition> {
        Ok(self.step_outcome(u)?.0)
    }
}
