//! Policy-gradient learners over unit-box bid actions.
//!
//! Networks are small MLPs with hand-written reverse-mode backprop
//! ([`mlp`]) trained by Adam. PPO and A2C use a logistic-squashed diagonal
//! Gaussian policy ([`policy`]); DDPG uses a deterministic actor and a critic
//! over the executed bid curve, with the actor gradient chained through the
//! mapping's vector-Jacobian product.

pub mod adam;
pub mod ddpg;
mod env;
pub mod gradcheck;
pub mod mlp;
pub mod on_policy;
pub mod policy;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use env::{Env, StepInfo, Transition};
pub use gradcheck::grad_check;
pub use policy::{policy_sample, PolicyParameters};
pub use train::{
    best_response_train, episode_seed, evaluate, make_learner, make_learner_for, moving_average,
    restart_seed, train, train_from, BestResponse, EpisodeMetrics, Evaluation, Learner, StepRecord,
    TrainResult, MA_WINDOW,
};

use crate::error::{Error, Result};
use crate::oracle::GapAggregation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Algorithm {
    Ppo,
    A2c,
    Ddpg,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ppo => "PPO",
            Algorithm::A2c => "A2C",
            Algorithm::Ddpg => "DDPG",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PPO" => Ok(Algorithm::Ppo),
            "A2C" => Ok(Algorithm::A2c),
            "DDPG" => Ok(Algorithm::Ddpg),
            "TRPO" => Err(Error::Config("TRPO is not implemented".into())),
            _ => Err(Error::Config(format!("unknown algorithm {s:?}"))),
        }
    }
}

/// Hyperparameters. Fields irrelevant to the chosen algorithm are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub algorithm: Algorithm,
    pub episodes: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub discount: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Episodes collected per on-policy update.
    pub episodes_per_update: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Rewards are multiplied by this before learning.
    pub reward_scale: f64,
    pub init_log_std: f64,
    /// Scale of the actor's output-layer initialization.
    pub actor_out_scale: f64,
    pub normalize_advantages: bool,
    pub tau: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub updates_per_episode: usize,
    pub warmup_episodes: usize,
    /// Exploration noise std in pre-squash space, annealed linearly.
    pub noise_start: f64,
    pub noise_end: f64,
    pub gap_aggregation: GapAggregation,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self::for_algorithm(Algorithm::Ppo)
    }
}

impl LearnerConfig {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        let base = Self {
            algorithm,
            episodes: 1000,
            seed: 0,
            hidden: vec![64, 64],
            discount: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            epochs: 10,
            minibatch: 32,
            episodes_per_update: 1,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            reward_scale: 1e-3,
            init_log_std: -0.5,
            actor_out_scale: 0.01,
            normalize_advantages: true,
            tau: 0.005,
            replay_capacity: 100_000,
            batch_size: 128,
            updates_per_episode: 32,
            warmup_episodes: 5,
            noise_start: 0.5,
            noise_end: 0.05,
            gap_aggregation: GapAggregation::RatioOfSums,
        };
        match algorithm {
            Algorithm::Ppo => base,
            Algorithm::A2c => Self {
                epochs: 1,
                minibatch: 8,
                actor_lr: 3e-4,
                critic_lr: 1e-3,
                ..base
            },
            Algorithm::Ddpg => Self {
                actor_lr: 1e-4,
                critic_lr: 1e-3,
                ..base
            },
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount must lie in (0, 1]");
        }
        if !(self.clip_ratio > 0.0) {
            return bad("clip_ratio must be positive");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.actor_lr >= 0.0 && self.critic_lr >= 0.0) {
            return bad("learning rates must be nonnegative");
        }
        if self.epochs == 0
            || self.minibatch == 0
            || self.episodes_per_update == 0
            || self.batch_size == 0
        {
            return bad("epochs, minibatch, episodes_per_update and batch_size must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if !(policy::LOG_STD_MIN..=policy::LOG_STD_MAX).contains(&self.init_log_std) {
            return bad("init_log_std must lie in [-5, 2]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) || self.replay_capacity == 0 {
            return bad("tau must lie in (0, 1] and replay_capacity be positive");
        }
        if !(self.noise_start >= 0.0 && self.noise_end >= 0.0) || !(self.reward_scale > 0.0) {
            return bad("noise levels must be nonnegative and reward_scale positive");
        }
        Ok(())
    }
}
