//! Benchmarks for the single-node market.
//!
//! [`optimal_profit`] enumerates agent-marginal clearing configurations: at
//! each opponent price level `p_j` the agent serves the residual `D − jΔq` and
//! the level is admissible when that residual is positive and profitable to
//! produce. It is the reference for optimality gaps. It ignores configurations
//! in which an opponent segment is marginal, so [`brute_force_best_response`]
//! can beat it.

use serde::{Deserialize, Serialize};

use crate::bid_domain::StepBidCurve;
use crate::error::{Error, Result};
use crate::market_single::{clear, CostModel, OpponentLadder};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// `−∞` when no level is admissible.
    pub pi_star: f64,
    pub p_star: f64,
    pub q_star: f64,
    pub feasible: bool,
}

pub fn q_mc(cost: &CostModel, p: f64) -> f64 {
    cost.q_mc(p)
}

/// One admissible level of the enumeration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub level: usize,
    pub price: f64,
    pub quantity: f64,
    pub profit: f64,
}

/// Admissible levels in ladder order.
pub fn candidates(demand: f64, ladder: &OpponentLadder, cost: &CostModel) -> Vec<Candidate> {
    let mut out = Vec::new();
    let mut below = 0.0;
    for (j, (&p, &w)) in ladder.prices.iter().zip(&ladder.widths).enumerate() {
        let offered_below = below;
        below += w;
        if offered_below + cost.q_mc(p) < demand {
            continue;
        }
        let q = demand - offered_below;
        if q <= 0.0 {
            continue;
        }
        out.push(Candidate {
            level: j,
            price: p,
            quantity: q,
            profit: p * q - cost.total(q),
        });
    }
    out
}

/// Theoretical optimal single-period profit by enumeration over price levels.
///
/// For a uniform ladder `offered_below` is `jΔq`; ragged ladders use the
/// cumulative width.
pub fn optimal_profit(demand: f64, ladder: &OpponentLadder, cost: &CostModel) -> OracleResult {
    let mut best = OracleResult {
        pi_star: f64::NEG_INFINITY,
        p_star: f64::NAN,
        q_star: 0.0,
        feasible: false,
    };
    for c in candidates(demand, ladder, cost) {
        if c.profit > best.pi_star {
            best = OracleResult {
                pi_star: c.profit,
                p_star: c.price,
                q_star: c.quantity,
                feasible: true,
            };
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BruteForceResult {
    pub profit: f64,
    pub price: f64,
    pub quantity: f64,
}

/// Best single-price bid over a price × offered-quantity grid, each candidate
/// cleared by [`clear`].
///
/// Prices run from 0 to one step above the ladder's top price; a bid above
/// every opponent segment clears only if demand exceeds the ladder, and then
/// at the cap. Offers at or above demand clear identically, so the quantity
/// sweep stops at the first grid point reaching `min(demand, q_max)`.
pub fn brute_force_best_response(
    demand: f64,
    ladder: &OpponentLadder,
    cost: &CostModel,
    price_step: f64,
    q_step: f64,
    price_cap: f64,
) -> Result<BruteForceResult> {
    if !(price_step > 0.0 && q_step > 0.0) {
        return Err(Error::Domain("grid steps must be positive".into()));
    }
    let top = ladder.prices.iter().copied().fold(0.0, f64::max) + price_step;
    let n_price = (top / price_step).round() as usize;
    let q_cap = cost.q_max;
    let n_q = (q_cap / q_step).round() as usize;
    let mut bid = StepBidCurve {
        breakpoints: vec![0.0, 0.0],
        prices: vec![0.0],
        q_max: 0.0,
        p_min: 0.0,
        p_max: price_cap,
    };
    let mut best = BruteForceResult {
        profit: 0.0,
        price: 0.0,
        quantity: 0.0,
    };
    for ip in 0..=n_price {
        let p = ip as f64 * price_step;
        bid.prices[0] = p;
        for iq in 0..=n_q {
            let q = (iq as f64 * q_step).min(q_cap);
            bid.breakpoints[1] = q;
            bid.q_max = q;
            let o = clear(&bid, ladder, demand, cost, price_cap)?;
            if o.agent_profit > best.profit {
                best = BruteForceResult {
                    profit: o.agent_profit,
                    price: p,
                    quantity: q,
                };
            }
            if q >= demand {
                break;
            }
        }
    }
    Ok(best)
}

/// `(Π* − Π)/|Π*|`.
pub fn optimality_gap(pi_rl: f64, pi_star: f64) -> Result<f64> {
    if pi_star == 0.0 || !pi_star.is_finite() {
        return Err(Error::UndefinedGap(format!("benchmark profit {pi_star}")));
    }
    Ok((pi_star - pi_rl) / pi_star.abs())
}

/// How per-period gaps combine into one daily number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapAggregation {
    /// Mean of per-period gaps over periods with a finite nonzero benchmark.
    MeanOfRatios,
    /// `(ΣΠ* − ΣΠ)/|ΣΠ*|` over the same periods.
    RatioOfSums,
}

/// Daily gap from `(benchmark, realized)` profits; infeasible periods (`None`)
/// and zero benchmarks are skipped. `None` if nothing remains.
pub fn daily_gap(periods: &[(Option<f64>, f64)], how: GapAggregation) -> Option<f64> {
    let usable = periods
        .iter()
        .filter_map(|&(star, rl)| star.filter(|s| *s != 0.0 && s.is_finite()).map(|s| (s, rl)));
    match how {
        GapAggregation::MeanOfRatios => {
            let (sum, n) = usable.fold((0.0, 0usize), |(acc, n), (s, rl)| {
                (acc + (s - rl) / s.abs(), n + 1)
            });
            (n > 0).then(|| sum / n as f64)
        }
        GapAggregation::RatioOfSums => {
            let (star, rl, n) = usable.fold((0.0, 0.0, 0usize), |(a, b, n), (s, r)| {
                (a + s, b + r, n + 1)
            });
            (n > 0 && star != 0.0).then(|| (star - rl) / star.abs())
        }
    }
}
