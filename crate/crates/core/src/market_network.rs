//! Network-constrained market on a DC power-flow model.
//!
//! Each period the committed generators' stepwise bids are cleared by a
//! security-constrained economic dispatch (SCED) LP with penalized line-limit
//! slacks. Nodal prices come from the LP duals:
//!
//! ```text
//! λ = 1·λᴱ + λᶜ,    λᶜ = −SFᵀ(μ⁺ − μ⁻)
//! ```
//!
//! where `λᴱ` is the dual of the power balance and `μ±` those of the upper and
//! lower flow limits. Commitment is a priority-list heuristic rather than a
//! unit-commitment MILP.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bid_domain::StepBidCurve;
use crate::error::{Error, Result};
use crate::learn::{
    episode_seed, make_learner_for, Env, LearnerConfig, PolicyParameters, StepInfo, Transition,
};
use crate::lp::{self, LpProblem, LpStatus};
use crate::market_single::CostModel;
use crate::param_maps::{h_mode, DpmpConfig, MapMode, UnitBoxAction};
use crate::rng::{self, SimRng};

const BUNDLED_39_BUS: &str = include_str!("../data/ieee39.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Per-unit series reactance, positive.
    pub reactance: f64,
    /// Flow limit in MW, applied in both directions.
    pub f_max: f64,
    /// Cost per MWh of limit violation.
    pub penalty: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub name: String,
    pub bus: usize,
    /// Marginal cost `a + b (q/capacity)^γ`.
    pub a: f64,
    pub b: f64,
    pub capacity: f64,
    /// Maximum change of output between consecutive periods, MW.
    pub ramp: f64,
    pub startup_cost: f64,
    pub fixed_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: usize,
    pub base_mw: f64,
}

/// Buses are numbered from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub name: String,
    pub buses: usize,
    pub slack_bus: usize,
    pub price_cap: f64,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
}

impl NetworkCase {
    /// The bundled 39-bus, 46-branch, 10-generator case.
    pub fn ieee39() -> Self {
        Self::from_json(BUNDLED_39_BUS).expect("bundled case is valid")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let case: Self = serde_json::from_str(s)
            .map_err(|e| Error::Case(format!("line {} column {}: {e}", e.line(), e.column())))?;
        case.check()?;
        Ok(case)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serializes")
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Case(m));
        let on_bus = |b: usize| (1..=self.buses).contains(&b);
        if self.buses == 0 || !on_bus(self.slack_bus) {
            return bad(format!(
                "slack bus {} outside 1..={}",
                self.slack_bus, self.buses
            ));
        }
        if !(self.price_cap > 0.0 && self.price_cap.is_finite()) {
            return bad(format!("price cap {} must be positive", self.price_cap));
        }
        for (l, br) in self.branches.iter().enumerate() {
            if !on_bus(br.from) || !on_bus(br.to) || br.from == br.to {
                return bad(format!("branch {l} joins buses {} and {}", br.from, br.to));
            }
            if !(br.reactance > 0.0 && br.reactance.is_finite()) {
                return bad(format!("branch {l} has reactance {}", br.reactance));
            }
            if !(br.f_max > 0.0) || !(br.penalty >= 0.0 && br.penalty.is_finite()) {
                return bad(format!(
                    "branch {l} has limit {} and penalty {}",
                    br.f_max, br.penalty
                ));
            }
        }
        if self.generators.is_empty() {
            return bad("a case needs at least one generator".into());
        }
        for g in &self.generators {
            if !on_bus(g.bus) {
                return bad(format!("generator {} on unknown bus {}", g.name, g.bus));
            }
            let finite = [g.a, g.b, g.capacity, g.ramp, g.startup_cost, g.fixed_cost]
                .iter()
                .all(|v| v.is_finite());
            if !finite || !(g.capacity > 0.0 && g.ramp > 0.0 && g.b > 0.0) {
                return bad(format!(
                    "generator {} needs positive b, capacity and ramp",
                    g.name
                ));
            }
        }
        for d in &self.loads {
            if !on_bus(d.bus) || !(d.base_mw >= 0.0 && d.base_mw.is_finite()) {
                return bad(format!("load {} MW on bus {}", d.base_mw, d.bus));
            }
        }
        // Connectivity by breadth-first search from the slack bus.
        let mut adj = vec![Vec::new(); self.buses + 1];
        for br in &self.branches {
            adj[br.from].push(br.to);
            adj[br.to].push(br.from);
        }
        let mut seen = vec![false; self.buses + 1];
        let mut queue = VecDeque::from([self.slack_bus]);
        seen[self.slack_bus] = true;
        while let Some(b) = queue.pop_front() {
            for &n in &adj[b] {
                if !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        if let Some(b) = (1..=self.buses).find(|&b| !seen[b]) {
            return bad(format!("bus {b} is not connected to the slack bus"));
        }
        Ok(())
    }

    pub fn total_capacity(&self) -> f64 {
        self.generators.iter().map(|g| g.capacity).sum()
    }

    /// Capacity that can leave the generator's bus: its nameplate, capped by
    /// the summed limits of the incident branches.
    pub fn deliverable_capacity(&self, i: usize) -> f64 {
        let g = &self.generators[i];
        let outlet: f64 = self
            .branches
            .iter()
            .filter(|br| br.from == g.bus || br.to == g.bus)
            .map(|br| br.f_max)
            .sum();
        g.capacity.min(outlet)
    }

    /// Base load per bus, indexed from 0.
    pub fn base_loads(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.buses];
        for l in &self.loads {
            d[l.bus - 1] += l.base_mw;
        }
        d
    }

    pub fn with_uniform_limits(mut self, f_max: f64) -> Self {
        self.branches.iter_mut().for_each(|b| b.f_max = f_max);
        self
    }
}

/// DC power transfer distribution factors, one row per branch and one column
/// per bus. Flow on a branch is positive from its `from` bus to its `to` bus.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftFactorMatrix {
    pub sf: DMatrix<f64>,
    pub slack_bus: usize,
}

impl ShiftFactorMatrix {
    /// Branch flows for a nodal injection vector (bus-indexed from 0).
    /// The slack bus absorbs any imbalance.
    pub fn flows(&self, injection: &[f64]) -> Vec<f64> {
        (0..self.sf.nrows())
            .map(|l| {
                (0..self.sf.ncols())
                    .map(|b| self.sf[(l, b)] * injection[b])
                    .sum()
            })
            .collect()
    }
}

pub fn build_shift_factors(case: &NetworkCase) -> Result<ShiftFactorMatrix> {
    case.check()?;
    let n = case.buses;
    let s = case.slack_bus - 1;
    let reduced = |b: usize| if b < s { b } else { b - 1 };
    let mut bred = DMatrix::<f64>::zeros(n - 1, n - 1);
    for br in &case.branches {
        let (f, t, y) = (br.from - 1, br.to - 1, 1.0 / br.reactance);
        if f != s {
            bred[(reduced(f), reduced(f))] += y;
        }
        if t != s {
            bred[(reduced(t), reduced(t))] += y;
        }
        if f != s && t != s {
            bred[(reduced(f), reduced(t))] -= y;
            bred[(reduced(t), reduced(f))] -= y;
        }
    }
    let x = bred
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Case("reduced susceptance matrix is singular".into()))?;
    // Sensitivity of bus angle `a` to injection at bus `b`; zero on the slack.
    let angle = |a: usize, b: usize| {
        if a == s || b == s {
            0.0
        } else {
            x[(reduced(a), reduced(b))]
        }
    };
    let sf = DMatrix::from_fn(case.branches.len(), n, |l, b| {
        let br = &case.branches[l];
        (angle(br.from - 1, b) - angle(br.to - 1, b)) / br.reactance
    });
    Ok(ShiftFactorMatrix {
        sf,
        slack_bus: case.slack_bus,
    })
}

/// Commitment `u` and start-up `y` flags, indexed `[t][generator]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Commitment {
    pub u: Vec<Vec<bool>>,
    pub y: Vec<Vec<bool>>,
}

/// Priority-list commitment for a horizon with total demand `demand[t]`.
///
/// Units are taken in ascending `a` until their deliverable capacity reaches
/// `margin` × the horizon's peak; if none suffices, all are committed. The
/// schedule is flat over the horizon and units start offline, so `y` is set
/// only in the first period.
pub fn commit(case: &NetworkCase, demand: &[f64], margin: f64) -> Result<Commitment> {
    if demand.is_empty() {
        return Err(Error::Domain("commitment needs at least one period".into()));
    }
    let peak = demand.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() || case.total_capacity() < peak {
        return Err(Error::Case(format!(
            "peak demand {peak} exceeds total capacity {}",
            case.total_capacity()
        )));
    }
    let mut order: Vec<usize> = (0..case.generators.len()).collect();
    order.sort_by(|&i, &j| case.generators[i].a.total_cmp(&case.generators[j].a));
    let mut on = vec![false; case.generators.len()];
    let mut committed = 0.0;
    for i in order {
        if committed >= margin * peak {
            break;
        }
        on[i] = true;
        committed += case.deliverable_capacity(i);
    }
    let u = vec![on.clone(); demand.len()];
    let mut y = vec![vec![false; on.len()]; demand.len()];
    y[0] = on;
    Ok(Commitment { u, y })
}

/// One cleared period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispatchResult {
    /// Output per generator.
    pub g: Vec<f64>,
    /// Output per generator and bid segment.
    pub g_seg: Vec<Vec<f64>>,
    pub u: Vec<bool>,
    pub y: Vec<bool>,
    pub s_plus: Vec<f64>,
    pub s_minus: Vec<f64>,
    pub flows: Vec<f64>,
    /// Nodal prices, bus-indexed from 0.
    pub lmp: Vec<f64>,
    pub lambda_e: f64,
    pub lambda_c: Vec<f64>,
    pub mu_plus: Vec<f64>,
    pub mu_minus: Vec<f64>,
    /// `lmp[bus_i]·g_i − C_i(g_i)` per generator.
    pub profit: Vec<f64>,
    /// LP objective: bid cost plus slack penalties.
    pub objective: f64,
}

impl DispatchResult {
    pub fn total_slack(&self) -> f64 {
        self.s_plus.iter().chain(&self.s_minus).sum()
    }

    /// `Σ_l f_l (μ⁺_l − μ⁻_l)`.
    pub fn congestion_rent(&self) -> f64 {
        self.flows
            .iter()
            .zip(self.mu_plus.iter().zip(&self.mu_minus))
            .map(|(f, (p, m))| f * (p - m))
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub periods: usize,
    /// Horizon peak of expected total load as a fraction of total capacity.
    pub peak_fraction: f64,
    pub amplitude: f64,
    pub phase: f64,
    /// Per-bus multiplicative load noise, as a fraction of the base.
    pub load_noise: f64,
    pub segments: usize,
    pub mode: MapMode,
    pub k_scale: f64,
    pub alpha: f64,
    pub commit_margin: f64,
    /// Cost exponents; drawn from Uniform(1,2) per generator when absent.
    pub gammas: Option<Vec<f64>>,
    pub enforce_ramp: bool,
    pub lp_tol: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            periods: 96,
            peak_fraction: 0.8,
            amplitude: 0.3,
            phase: -PI / 2.0,
            load_noise: 0.01,
            segments: 10,
            mode: MapMode::Dpmp,
            // The curve tops out at (1 − e^{−αkK})·cap: about 0.92·cap here.
            k_scale: 0.25,
            alpha: 1.0,
            commit_margin: 1.1,
            gammas: None,
            enforce_ramp: true,
            lp_tol: 1e-9,
        }
    }
}

/// Inputs of one SCED solve.
#[derive(Clone, Copy, Debug)]
pub struct ScedInput<'a> {
    pub bids: &'a [StepBidCurve],
    /// Load per bus, indexed from 0.
    pub loads: &'a [f64],
    pub commitment: &'a [bool],
    pub startups: &'a [bool],
    /// Previous period's output, for ramp limits.
    pub prev: Option<&'a [f64]>,
}

/// A case with its shift factors, cost curves and load model.
#[derive(Clone, Debug)]
pub struct NetworkMarket {
    pub case: NetworkCase,
    pub sf: ShiftFactorMatrix,
    pub config: NetworkConfig,
    pub gammas: Vec<f64>,
    pub costs: Vec<CostModel>,
    pub map_configs: Vec<DpmpConfig>,
    load_scale: f64,
}

impl NetworkMarket {
    /// `seed` fixes the cost exponents when the config leaves them open.
    pub fn new(case: NetworkCase, config: NetworkConfig, seed: u64) -> Result<Self> {
        let sf = build_shift_factors(&case)?;
        if config.periods == 0 || config.segments == 0 {
            return Err(Error::Config(
                "periods and segments must be positive".into(),
            ));
        }
        if !(config.amplitude >= 0.0 && config.amplitude < 1.0)
            || !(config.load_noise >= 0.0)
            || !(config.peak_fraction > 0.0)
        {
            return Err(Error::Config(
                "need 0 ≤ amplitude < 1, load_noise ≥ 0 and peak_fraction > 0".into(),
            ));
        }
        if !(config.commit_margin >= 1.0) || !(config.lp_tol > 0.0) {
            return Err(Error::Config(
                "commit_margin must be at least 1 and lp_tol positive".into(),
            ));
        }
        let n_gen = case.generators.len();
        let gammas = match &config.gammas {
            Some(g) if g.len() == n_gen => g.clone(),
            Some(g) => {
                return Err(Error::Config(format!(
                    "{} gammas for {n_gen} generators",
                    g.len()
                )))
            }
            None => {
                let mut r = rng::derive(seed, "network-gamma");
                (0..n_gen).map(|_| r.random_range(1.0..2.0)).collect()
            }
        };
        let costs = case
            .generators
            .iter()
            .zip(&gammas)
            .map(|(g, &gamma)| CostModel::new(g.a, g.b, gamma, g.capacity))
            .collect::<Result<Vec<_>>>()?;
        let map_configs: Vec<DpmpConfig> = case
            .generators
            .iter()
            .map(|g| DpmpConfig {
                k_scale: config.k_scale,
                alpha: config.alpha,
                q_max: g.capacity,
                p_min: 0.0,
                p_max: case.price_cap,
            })
            .collect();
        for m in &map_configs {
            m.check()?;
        }
        let base: f64 = case.loads.iter().map(|l| l.base_mw).sum();
        let load_scale = if base > 0.0 {
            config.peak_fraction * case.total_capacity() / (base * (1.0 + config.amplitude))
        } else {
            0.0
        };
        Ok(Self {
            case,
            sf,
            config,
            gammas,
            costs,
            map_configs,
            load_scale,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.case.generators.len()
    }

    fn shape(&self, t: usize) -> f64 {
        let c = &self.config;
        1.0 + c.amplitude * (2.0 * PI * t as f64 / c.periods as f64 + c.phase).sin()
    }

    /// Noise-free total load at period `t`.
    pub fn mean_total_load(&self, t: usize) -> f64 {
        self.case.loads.iter().map(|l| l.base_mw).sum::<f64>() * self.load_scale * self.shape(t)
    }

    /// Per-bus loads for every period, `[t][bus]`, from one episode seed.
    pub fn sample_loads(&self, episode_seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::seeded(episode_seed);
        let base = self.case.base_loads();
        (0..self.config.periods)
            .map(|t| {
                let s = self.load_scale * self.shape(t);
                base.iter()
                    .map(|&b| {
                        let eps: f64 = StandardNormal.sample(&mut r);
                        (b * s * (1.0 + self.config.load_noise * eps)).max(0.0)
                    })
                    .collect()
            })
            .collect()
    }

    /// The dispatch LP for one period. Columns are the bid segments of every
    /// generator in order, then `s⁺` and `s⁻` per branch; row 0 is the energy
    /// balance and rows `2l`, `2l + 1` of the inequalities bound branch `l`.
    pub fn sced_lp(&self, input: &ScedInput) -> Result<LpProblem> {
        let case = &self.case;
        let n_gen = case.generators.len();
        let n_line = case.branches.len();
        let n_bus = case.buses;
        if input.bids.len() != n_gen
            || input.commitment.len() != n_gen
            || input.startups.len() != n_gen
        {
            return Err(Error::Structural(format!(
                "need {n_gen} bids, commitment and start-up flags"
            )));
        }
        if input.loads.len() != n_bus || input.prev.is_some_and(|p| p.len() != n_gen) {
            return Err(Error::Structural(format!(
                "need {n_bus} bus loads and {n_gen} previous outputs"
            )));
        }
        for (bid, g) in input.bids.iter().zip(&case.generators) {
            if bid.q_max > g.capacity * (1.0 + 1e-12) {
                return Err(Error::Domain(format!(
                    "bid of {} offers {} MW above capacity {}",
                    g.name, bid.q_max, g.capacity
                )));
            }
        }

        // Columns: segments of every generator, then s⁺, then s⁻.
        let mut offset = Vec::with_capacity(n_gen + 1);
        offset.push(0);
        for bid in input.bids {
            offset.push(offset.last().unwrap() + bid.segments());
        }
        let n_seg = offset[n_gen];
        let n = n_seg + 2 * n_line;
        let mut p = LpProblem::new(n);
        for (i, bid) in input.bids.iter().enumerate() {
            for b in 0..bid.segments() {
                let j = offset[i] + b;
                p.objective[j] = bid.prices[b];
                p.upper[j] = if input.commitment[i] {
                    bid.width(b).max(0.0)
                } else {
                    0.0
                };
            }
        }
        for (l, br) in case.branches.iter().enumerate() {
            p.objective[n_seg + l] = br.penalty;
            p.objective[n_seg + n_line + l] = br.penalty;
        }
        let total_load: f64 = input.loads.iter().sum();
        let mut balance = vec![0.0; n];
        balance[..n_seg].iter_mut().for_each(|v| *v = 1.0);
        p.add_eq(balance, total_load);
        let load_flow = self.sf.flows(input.loads);
        for (l, br) in case.branches.iter().enumerate() {
            let mut up = vec![0.0; n];
            for (i, g) in case.generators.iter().enumerate() {
                let f = self.sf.sf[(l, g.bus - 1)];
                up[offset[i]..offset[i + 1]].iter_mut().for_each(|v| *v = f);
            }
            let mut down: Vec<f64> = up.iter().map(|v| -v).collect();
            up[n_seg + l] = -1.0;
            down[n_seg + n_line + l] = -1.0;
            p.add_le(up, br.f_max + load_flow[l]);
            p.add_le(down, br.f_max - load_flow[l]);
        }
        if let (Some(prev), true) = (input.prev, self.config.enforce_ramp) {
            for (i, g) in case.generators.iter().enumerate() {
                // With outputs confined to [0, capacity] a ramp ≥ capacity cannot bind.
                if g.ramp >= g.capacity {
                    continue;
                }
                let mut row = vec![0.0; n];
                row[offset[i]..offset[i + 1]]
                    .iter_mut()
                    .for_each(|v| *v = 1.0);
                let neg: Vec<f64> = row.iter().map(|v| -v).collect();
                p.add_le(row, prev[i] + g.ramp);
                p.add_le(neg, g.ramp - prev[i]);
            }
        }

        Ok(p)
    }

    /// Builds and solves the dispatch LP for one period.
    pub fn sced(&self, input: &ScedInput) -> Result<DispatchResult> {
        let case = &self.case;
        let n_gen = case.generators.len();
        let n_line = case.branches.len();
        let n_bus = case.buses;
        let p = self.sced_lp(input)?;
        let mut offset = Vec::with_capacity(n_gen + 1);
        offset.push(0);
        for bid in input.bids {
            offset.push(offset.last().unwrap() + bid.segments());
        }
        let n_seg = offset[n_gen];
        let sol = lp::solve(&p, self.config.lp_tol)?;
        if sol.status != LpStatus::Optimal {
            return Err(Error::Internal(format!(
                "dispatch LP is {:?} despite line slacks",
                sol.status
            )));
        }
        let g_seg: Vec<Vec<f64>> = (0..n_gen)
            .map(|i| sol.x[offset[i]..offset[i + 1]].to_vec())
            .collect();
        let g: Vec<f64> = g_seg.iter().map(|s| s.iter().sum()).collect();
        let lambda_e = sol.eq_duals[0];
        let mu_plus: Vec<f64> = (0..n_line).map(|l| sol.ineq_duals[2 * l]).collect();
        let mu_minus: Vec<f64> = (0..n_line).map(|l| sol.ineq_duals[2 * l + 1]).collect();
        let lambda_c: Vec<f64> = (0..n_bus)
            .map(|b| {
                -(0..n_line)
                    .map(|l| self.sf.sf[(l, b)] * (mu_plus[l] - mu_minus[l]))
                    .sum::<f64>()
            })
            .collect();
        let lmp: Vec<f64> = lambda_c.iter().map(|c| lambda_e + c).collect();
        let mut injection: Vec<f64> = input.loads.iter().map(|d| -d).collect();
        for (gen, gi) in case.generators.iter().zip(&g) {
            injection[gen.bus - 1] += gi;
        }
        let flows = self.sf.flows(&injection);
        let profit = case
            .generators
            .iter()
            .zip(&g)
            .zip(&self.costs)
            .map(|((gen, &gi), cost)| lmp[gen.bus - 1] * gi - cost.total(gi))
            .collect();
        Ok(DispatchResult {
            g,
            g_seg,
            u: input.commitment.to_vec(),
            y: input.startups.to_vec(),
            s_plus: sol.x[n_seg..n_seg + n_line].to_vec(),
            s_minus: sol.x[n_seg + n_line..].to_vec(),
            flows,
            lmp,
            lambda_e,
            lambda_c,
            mu_plus,
            mu_minus,
            profit,
            objective: sol.objective,
        })
    }

    /// Starts an episode: samples loads and fixes the commitment.
    pub fn start(&self, episode_seed: u64) -> Result<MultiAgentEpisode<'_>> {
        let loads = self.sample_loads(episode_seed);
        let totals: Vec<f64> = loads.iter().map(|d| d.iter().sum()).collect();
        let commitment = commit(&self.case, &totals, self.config.commit_margin)?;
        Ok(MultiAgentEpisode {
            market: self,
            loads,
            totals,
            commitment,
            t: 0,
            prev: None,
        })
    }

    /// Runs one episode with every agent following its policy. Sampling uses
    /// `rng` unless `deterministic` is set.
    pub fn run_episode(
        &self,
        policies: &[PolicyParameters],
        episode_seed: u64,
        deterministic: bool,
        rng: &mut SimRng,
    ) -> Result<EpisodeOutcome> {
        if policies.len() != self.n_agents() {
            return Err(Error::Structural(format!(
                "{} policies for {} agents",
                policies.len(),
                self.n_agents()
            )));
        }
        let mut ep = self.start(episode_seed)?;
        let mut profits = vec![0.0; self.n_agents()];
        let mut dispatch = Vec::with_capacity(self.config.periods);
        while !ep.done() {
            let obs = ep.observation();
            let actions = policies
                .iter()
                .map(|p| {
                    let u = if deterministic || p.log_std.is_empty() {
                        p.deterministic(&obs)?
                    } else {
                        p.sample(&obs, rng)?.u
                    };
                    UnitBoxAction::from_flat(&u)
                })
                .collect::<Result<Vec<_>>>()?;
            let r = ep.step(&actions)?;
            profits.iter_mut().zip(&r.profit).for_each(|(v, p)| *v += p);
            dispatch.push(r);
        }
        Ok(EpisodeOutcome {
            profits,
            dispatch,
            commitment: ep.commitment,
        })
    }

    /// Mean per-agent profit over `seeds` with deterministic policies.
    pub fn evaluate_profile(
        &self,
        policies: &[PolicyParameters],
        seeds: &[u64],
    ) -> Result<Vec<f64>> {
        if seeds.is_empty() {
            return Err(Error::Config("evaluation needs at least one seed".into()));
        }
        let mut sum = vec![0.0; self.n_agents()];
        let mut unused = rng::seeded(0);
        for &s in seeds {
            let out = self.run_episode(policies, s, true, &mut unused)?;
            sum.iter_mut().zip(&out.profits).for_each(|(a, p)| *a += p);
        }
        Ok(sum.into_iter().map(|v| v / seeds.len() as f64).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    /// `V_i`, summed over periods.
    pub profits: Vec<f64>,
    pub dispatch: Vec<DispatchResult>,
    pub commitment: Commitment,
}

/// Observation length shared by all agents.
pub const OBS_DIM: usize = 3;

/// Period-by-period state of one episode.
///
/// Every agent observes `(sin(2πt/T), cos(2πt/T), D_{t−1}/capacity)`, with
/// the noise-free load of period `T−1` standing in before the first period.
pub struct MultiAgentEpisode<'m> {
    market: &'m NetworkMarket,
    pub loads: Vec<Vec<f64>>,
    pub totals: Vec<f64>,
    pub commitment: Commitment,
    t: usize,
    prev: Option<Vec<f64>>,
}

impl MultiAgentEpisode<'_> {
    pub fn period(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.t >= self.totals.len()
    }

    pub fn observation(&self) -> Vec<f64> {
        let periods = self.totals.len();
        let phase = 2.0 * PI * self.t as f64 / periods as f64;
        let prev = if self.t == 0 {
            self.market.mean_total_load(periods - 1)
        } else {
            self.totals[self.t - 1]
        };
        vec![
            phase.sin(),
            phase.cos(),
            prev / self.market.case.total_capacity(),
        ]
    }

    /// Maps each agent's action to a bid and clears the current period.
    pub fn step(&mut self, actions: &[UnitBoxAction]) -> Result<DispatchResult> {
        let market = self.market;
        if actions.len() != market.n_agents() {
            return Err(Error::Structural(format!(
                "{} actions for {} agents",
                actions.len(),
                market.n_agents()
            )));
        }
        let bids = actions
            .iter()
            .zip(&market.map_configs)
            .map(|(u, cfg)| h_mode(u, market.config.mode, cfg))
            .collect::<Result<Vec<_>>>()?;
        self.step_bids(&bids)
    }

    pub fn step_bids(&mut self, bids: &[StepBidCurve]) -> Result<DispatchResult> {
        if self.done() {
            return Err(Error::Domain("episode finished; start a new one".into()));
        }
        let t = self.t;
        let r = self.market.sced(&ScedInput {
            bids,
            loads: &self.loads[t],
            commitment: &self.commitment.u[t],
            startups: &self.commitment.y[t],
            prev: self.prev.as_deref(),
        })?;
        self.prev = Some(r.g.clone());
        self.t += 1;
        Ok(r)
    }
}

/// Per-episode record of simultaneous training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiAgentEpisodeMetrics {
    pub episode: usize,
    pub profits: Vec<f64>,
    pub total_slack: f64,
}

#[derive(Clone, Debug)]
pub struct MultiAgentTraining {
    pub params: Vec<PolicyParameters>,
    pub metrics: Vec<MultiAgentEpisodeMetrics>,
}

/// Trains one independent learner per generator, all acting simultaneously.
///
/// Agent `i` draws from its own stream derived from `(config.seed, i)`; loads
/// of episode `e` come from `episode_seed(config.seed, e)`.
pub fn train_agents(
    market: &NetworkMarket,
    config: &LearnerConfig,
    observer: &mut dyn FnMut(usize, &DispatchResult),
) -> Result<MultiAgentTraining> {
    let n = market.n_agents();
    let mut rngs: Vec<SimRng> = (0..n)
        .map(|i| rng::derive(config.seed, &format!("agent/{i}")))
        .collect();
    let mut learners = (0..n)
        .map(|i| {
            make_learner_for(
                config,
                OBS_DIM,
                market.config.segments,
                market.config.mode,
                &market.map_configs[i],
                None,
                &mut rngs[i],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut metrics = Vec::with_capacity(config.episodes);
    for e in 1..=config.episodes {
        let mut ep = market.start(episode_seed(config.seed, e))?;
        let mut profits = vec![0.0; n];
        let mut slack = 0.0;
        let mut obs = ep.observation();
        while !ep.done() {
            let actions = learners
                .iter_mut()
                .zip(rngs.iter_mut())
                .map(|(l, r)| UnitBoxAction::from_flat(&l.act(&obs, r)?))
                .collect::<Result<Vec<_>>>()?;
            let r = ep.step(&actions)?;
            let done = ep.done();
            obs = if done {
                vec![0.0; OBS_DIM]
            } else {
                ep.observation()
            };
            for (i, l) in learners.iter_mut().enumerate() {
                l.record(r.profit[i], &obs, done);
                profits[i] += r.profit[i];
            }
            slack += r.total_slack();
            observer(e, &r);
        }
        for (i, (l, r)) in learners.iter_mut().zip(rngs.iter_mut()).enumerate() {
            l.end_episode(e, r).map_err(|err| match err {
                Error::Divergence(m) => {
                    Error::Divergence(format!("agent {}, episode {e}: {m}", i + 1))
                }
                other => other,
            })?;
        }
        metrics.push(MultiAgentEpisodeMetrics {
            episode: e,
            profits,
            total_slack: slack,
        });
    }
    Ok(MultiAgentTraining {
        params: learners.iter().map(|l| l.parameters()).collect(),
        metrics,
    })
}

/// Single-agent view of the market for agent `agent`, with every other agent
/// frozen at its deterministic policy.
pub struct FrozenOpponentEnv<'m> {
    market: &'m NetworkMarket,
    agent: usize,
    opponents: Vec<PolicyParameters>,
    episode: Option<MultiAgentEpisode<'m>>,
}

impl<'m> FrozenOpponentEnv<'m> {
    /// `profile` holds one policy per agent; the entry for `agent` is ignored.
    pub fn new(
        market: &'m NetworkMarket,
        agent: usize,
        profile: &[PolicyParameters],
    ) -> Result<Self> {
        if agent >= market.n_agents() || profile.len() != market.n_agents() {
            return Err(Error::Structural(format!(
                "agent {agent} of a {}-policy profile",
                profile.len()
            )));
        }
        Ok(Self {
            market,
            agent,
            opponents: profile.to_vec(),
            episode: None,
        })
    }
}

impl Env for FrozenOpponentEnv<'_> {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn segments(&self) -> usize {
        self.market.config.segments
    }

    fn horizon(&self) -> usize {
        self.market.config.periods
    }

    fn mode(&self) -> MapMode {
        self.market.config.mode
    }

    fn map_config(&self) -> &DpmpConfig {
        &self.market.map_configs[self.agent]
    }

    fn reset(&mut self, episode_seed: u64) -> Result<Vec<f64>> {
        let ep = self.market.start(episode_seed)?;
        let obs = ep.observation();
        self.episode = Some(ep);
        Ok(obs)
    }

    fn step(&mut self, u: &UnitBoxAction) -> Result<Transition> {
        let ep = self
            .episode
            .as_mut()
            .ok_or_else(|| Error::Domain("call reset before step".into()))?;
        let obs = ep.observation();
        let t = ep.period();
        let mut actions = Vec::with_capacity(self.opponents.len());
        for (j, p) in self.opponents.iter().enumerate() {
            actions.push(if j == self.agent {
                u.clone()
            } else {
                UnitBoxAction::from_flat(&p.deterministic(&obs)?)?
            });
        }
        let market = self.market;
        let curve = h_mode(u, market.config.mode, &market.map_configs[self.agent])?;
        let r = ep.step(&actions)?;
        let done = ep.done();
        let bus = market.case.generators[self.agent].bus - 1;
        let info = StepInfo {
            t,
            demand: ep.totals[t],
            price: r.lmp[bus],
            dispatch: r.g[self.agent],
            profit: r.profit[self.agent],
            oracle_profit: None,
            curve,
        };
        let next = if done {
            vec![0.0; OBS_DIM]
        } else {
            ep.observation()
        };
        Ok(Transition {
            obs: next,
            reward: info.profit,
            done,
            info,
        })
    }
}
