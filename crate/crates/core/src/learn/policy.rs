//! Diagonal Gaussian policy squashed elementwise by the logistic function.
//!
//! `y ~ N(μ(s), diag σ²)`, `u = logistic(y)`. The density of `u` carries the
//! change-of-variables term `−Σ log(u(1−u))`. The squash is a diffeomorphism
//! onto the open box, so it adds no atoms or folds of its own.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::Algorithm;
use crate::error::{Error, Result};
use crate::param_maps::UnitBoxAction;
use crate::rng::SimRng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const FORMAT_VERSION: u32 = 1;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Elementwise logistic, kept strictly inside (0,1).
///
/// For `|y| > ~36` the exact value rounds to 0 or 1 in f64; the result is
/// nudged to the nearest representable interior value.
pub fn logistic(y: f64) -> f64 {
    let u = if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    };
    u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Log-density of `u = logistic(y)` under the squashed Gaussian.
pub fn squashed_log_prob(y: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    let mut lp = 0.0;
    for ((&yi, &mi), &ls) in y.iter().zip(mean).zip(log_std) {
        let z = (yi - mi) * (-ls).exp();
        // log u + log(1−u) = −softplus(−y) − softplus(y).
        lp += -0.5 * z * z - ls - HALF_LN_2PI + softplus(-yi) + softplus(yi);
    }
    lp
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParameters {
    pub format_version: u32,
    pub algorithm: Algorithm,
    pub actor: Mlp,
    pub actor_params: Vec<f64>,
    /// Empty for deterministic learners.
    pub log_std: Vec<f64>,
    pub critic: Mlp,
    pub critic_params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sampled {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub log_prob: f64,
}

impl PolicyParameters {
    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    /// Pre-squash mean `μ(s)`.
    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim() || obs.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!(
                "observation {obs:?} is not a finite vector of length {}",
                self.obs_dim()
            )));
        }
        let m = self.actor.eval(&self.actor_params, obs);
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence("actor produced a non-finite mean".into()));
        }
        Ok(m)
    }

    pub fn sample(&self, obs: &[f64], rng: &mut SimRng) -> Result<Sampled> {
        let mean = self.mean(obs)?;
        let mut y = Vec::with_capacity(mean.len());
        for (m, ls) in mean.iter().zip(&self.log_std) {
            let eps: f64 = StandardNormal.sample(rng);
            y.push(m + ls.exp() * eps);
        }
        let u = y.iter().map(|&v| logistic(v)).collect();
        let log_prob = squashed_log_prob(&y, &mean, &self.log_std);
        Ok(Sampled { y, u, log_prob })
    }

    /// `logistic(μ(s))`, the zero-noise action.
    pub fn deterministic(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.mean(obs)?.into_iter().map(logistic).collect())
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.critic.eval(&self.critic_params, obs)[0]
    }

    pub fn is_finite(&self) -> bool {
        self.actor_params
            .iter()
            .chain(&self.log_std)
            .chain(&self.critic_params)
            .all(|x| x.is_finite())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("parameters serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self =
            serde_json::from_str(s).map_err(|e| Error::Data(format!("checkpoint: {e}")))?;
        if p.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint format {} is not {FORMAT_VERSION}",
                p.format_version
            )));
        }
        if p.actor_params.len() != p.actor.n_params()
            || p.critic_params.len() != p.critic.n_params()
        {
            return Err(Error::Data("checkpoint parameter count mismatch".into()));
        }
        Ok(p)
    }
}

/// One stochastic action and its log-density.
pub fn policy_sample(
    params: &PolicyParameters,
    obs: &[f64],
    rng: &mut SimRng,
) -> Result<(UnitBoxAction, f64)> {
    let s = params.sample(obs, rng)?;
    Ok((UnitBoxAction::from_flat(&s.u)?, s.log_prob))
}
