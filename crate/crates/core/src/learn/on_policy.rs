//! PPO and A2C with a shared rollout buffer and GAE.
//!
//! The actor parameter vector `θ` is the MLP weights followed by the per-
//! dimension log-std. The critic is a separate MLP.

use rand::seq::SliceRandom;

use super::adam::{clip_grad_norm, Adam};
use super::mlp::{Mlp, Trace};
use super::policy::{
    logistic, squashed_log_prob, PolicyParameters, FORMAT_VERSION, LOG_STD_MAX, LOG_STD_MIN,
};
use super::train::Learner;
use super::{Algorithm, LearnerConfig};
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Per-step rollout storage, flat row-major for observations and samples.
#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub obs: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub log_prob: Vec<f64>,
    pub reward: Vec<f64>,
    pub value: Vec<f64>,
    /// Value of the observation after each step; 0 at terminal steps.
    pub next_value: Vec<f64>,
    pub done: Vec<bool>,
    pub advantage: Vec<f64>,
    pub ret: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(obs_dim: usize, act_dim: usize) -> Self {
        Self {
            obs_dim,
            act_dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    pub fn clear(&mut self) {
        let (o, a) = (self.obs_dim, self.act_dim);
        *self = Self::new(o, a);
    }

    /// GAE(λ); `returns = advantages + values`.
    pub fn compute_gae(&mut self, discount: f64, lambda: f64) {
        let n = self.len();
        self.advantage = vec![0.0; n];
        let mut next_adv = 0.0;
        for t in (0..n).rev() {
            let live = if self.done[t] { 0.0 } else { 1.0 };
            let delta = self.reward[t] + discount * self.next_value[t] * live - self.value[t];
            next_adv = delta + discount * lambda * live * next_adv;
            self.advantage[t] = next_adv;
        }
        self.ret = self
            .advantage
            .iter()
            .zip(&self.value)
            .map(|(a, v)| a + v)
            .collect();
    }
}

/// A minibatch view for the policy losses.
pub struct PolicyBatch<'a> {
    pub obs: &'a [f64],
    pub y: &'a [f64],
    pub old_log_prob: &'a [f64],
    pub advantage: &'a [f64],
}

impl PolicyBatch<'_> {
    fn len(&self) -> usize {
        self.advantage.len()
    }
}

/// Shared per-sample pass: returns `(log_prob, ∂log_prob/∂mean, ∂log_prob/∂log_std)`.
fn sample_terms(
    actor: &Mlp,
    theta: &[f64],
    obs: &[f64],
    y: &[f64],
    trace: &mut Trace,
) -> (f64, Vec<f64>, Vec<f64>) {
    let n = actor.n_params();
    let log_std = &theta[n..];
    actor.forward(&theta[..n], obs, trace);
    let mean = trace.output();
    let lp = squashed_log_prob(y, mean, log_std);
    let mut d_mean = Vec::with_capacity(mean.len());
    let mut d_ls = Vec::with_capacity(mean.len());
    for ((&yi, &mi), &ls) in y.iter().zip(mean).zip(log_std) {
        let inv_var = (-2.0 * ls).exp();
        d_mean.push((yi - mi) * inv_var);
        d_ls.push((yi - mi) * (yi - mi) * inv_var - 1.0);
    }
    (lp, d_mean, d_ls)
}

/// Generic score-function loss `mean(−c_i · log_prob_i) − ent·Σ log_std` where
/// the per-sample coefficient comes from `coef(log_prob, i)` as `(loss_i, ∂loss_i/∂log_prob)`.
fn score_loss(
    actor: &Mlp,
    theta: &[f64],
    batch: &PolicyBatch,
    entropy_coef: f64,
    grad: Option<&mut [f64]>,
    coef: impl Fn(f64, usize) -> (f64, f64),
) -> f64 {
    let n = actor.n_params();
    let (od, ad) = (actor.input_dim(), actor.output_dim());
    let m = batch.len() as f64;
    let mut trace = Trace::default();
    let mut loss = 0.0;
    let mut g = grad;
    for i in 0..batch.len() {
        let obs = &batch.obs[i * od..(i + 1) * od];
        let y = &batch.y[i * ad..(i + 1) * ad];
        let (lp, d_mean, d_ls) = sample_terms(actor, theta, obs, y, &mut trace);
        let (li, dli) = coef(lp, i);
        loss += li / m;
        if let Some(g) = g.as_deref_mut() {
            let s = dli / m;
            if s != 0.0 {
                let d_out: Vec<f64> = d_mean.iter().map(|d| d * s).collect();
                actor.backward(&theta[..n], &trace, &d_out, &mut g[..n], None);
                for (gl, d) in g[n..].iter_mut().zip(&d_ls) {
                    *gl += d * s;
                }
            }
        }
    }
    let log_std_sum: f64 = theta[n..].iter().sum();
    loss -= entropy_coef * log_std_sum;
    if let Some(g) = g {
        for gl in g[n..].iter_mut() {
            *gl -= entropy_coef;
        }
    }
    loss
}

/// PPO clipped surrogate, negated for minimization.
pub fn ppo_loss(
    actor: &Mlp,
    theta: &[f64],
    batch: &PolicyBatch,
    clip: f64,
    entropy_coef: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    score_loss(actor, theta, batch, entropy_coef, grad, |lp, i| {
        let a = batch.advantage[i];
        let r = (lp - batch.old_log_prob[i]).exp();
        let clipped = r.clamp(1.0 - clip, 1.0 + clip);
        let surr = (r * a).min(clipped * a);
        let clip_active = (a >= 0.0 && r > 1.0 + clip) || (a < 0.0 && r < 1.0 - clip);
        (-surr, if clip_active { 0.0 } else { -r * a })
    })
}

/// Vanilla advantage actor-critic policy loss `−mean(A · log π)`.
pub fn a2c_loss(
    actor: &Mlp,
    theta: &[f64],
    batch: &PolicyBatch,
    entropy_coef: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    score_loss(actor, theta, batch, entropy_coef, grad, |lp, i| {
        let a = batch.advantage[i];
        (-a * lp, -a)
    })
}

/// `0.5 · mean((V(s) − R)²)`.
pub fn value_loss(
    critic: &Mlp,
    params: &[f64],
    obs: &[f64],
    returns: &[f64],
    grad: Option<&mut [f64]>,
) -> f64 {
    let od = critic.input_dim();
    let m = returns.len() as f64;
    let mut trace = Trace::default();
    let mut loss = 0.0;
    let mut g = grad;
    for (i, &r) in returns.iter().enumerate() {
        critic.forward(params, &obs[i * od..(i + 1) * od], &mut trace);
        let err = trace.output()[0] - r;
        loss += 0.5 * err * err / m;
        if let Some(g) = g.as_deref_mut() {
            critic.backward(params, &trace, &[err / m], g, None);
        }
    }
    loss
}

pub struct OnPolicyLearner {
    cfg: LearnerConfig,
    actor: Mlp,
    critic: Mlp,
    theta: Vec<f64>,
    critic_params: Vec<f64>,
    actor_opt: Adam,
    critic_opt: Adam,
    buf: RolloutBuffer,
    pending: bool,
    episodes_buffered: usize,
    trace: Trace,
}

impl OnPolicyLearner {
    pub fn new(
        cfg: &LearnerConfig,
        obs_dim: usize,
        act_dim: usize,
        init: Option<&PolicyParameters>,
        rng: &mut SimRng,
    ) -> Result<Self> {
        let (actor, critic, theta, critic_params) = match init {
            Some(p) => {
                if p.obs_dim() != obs_dim || p.action_dim() != act_dim || p.log_std.len() != act_dim
                {
                    return Err(Error::Config(
                        "initial parameters do not fit the environment".into(),
                    ));
                }
                let mut theta = p.actor_params.clone();
                theta.extend_from_slice(&p.log_std);
                (
                    p.actor.clone(),
                    p.critic.clone(),
                    theta,
                    p.critic_params.clone(),
                )
            }
            None => {
                let actor = Mlp::new(obs_dim, &cfg.hidden, act_dim);
                let critic = Mlp::new(obs_dim, &cfg.hidden, 1);
                let mut theta = actor.init(rng, cfg.actor_out_scale);
                theta.extend(std::iter::repeat_n(cfg.init_log_std, act_dim));
                let cp = critic.init(rng, 1.0);
                (actor, critic, theta, cp)
            }
        };
        Ok(Self {
            actor_opt: Adam::new(theta.len(), cfg.actor_lr),
            critic_opt: Adam::new(critic_params.len(), cfg.critic_lr),
            cfg: cfg.clone(),
            buf: RolloutBuffer::new(obs_dim, act_dim),
            actor,
            critic,
            theta,
            critic_params,
            pending: false,
            episodes_buffered: 0,
            trace: Trace::default(),
        })
    }

    fn log_std(&self) -> &[f64] {
        &self.theta[self.actor.n_params()..]
    }

    fn update(&mut self, rng: &mut SimRng) -> Result<()> {
        let cfg = &self.cfg;
        self.buf.compute_gae(cfg.discount, cfg.gae_lambda);
        let n = self.buf.len();
        let mut adv = self.buf.advantage.clone();
        if cfg.normalize_advantages && n > 1 {
            let mean = adv.iter().sum::<f64>() / n as f64;
            let std = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64).sqrt();
            adv.iter_mut().for_each(|a| *a = (*a - mean) / (std + 1e-8));
        }
        let (od, ad) = (self.buf.obs_dim, self.buf.act_dim);
        // A2C takes one pass over consecutive chunks; PPO reuses shuffled minibatches.
        let (epochs, mb) = match cfg.algorithm {
            Algorithm::A2c => (1, cfg.minibatch.min(n)),
            _ => (cfg.epochs, cfg.minibatch.min(n)),
        };
        let mut idx: Vec<usize> = (0..n).collect();
        let mut g_actor = vec![0.0; self.theta.len()];
        let mut g_critic = vec![0.0; self.critic_params.len()];
        let (mut obs, mut y, mut olp, mut a, mut ret) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for _ in 0..epochs {
            if cfg.algorithm == Algorithm::Ppo {
                idx.shuffle(rng);
            }
            for chunk in idx.chunks(mb) {
                obs.clear();
                y.clear();
                olp.clear();
                a.clear();
                ret.clear();
                for &i in chunk {
                    obs.extend_from_slice(&self.buf.obs[i * od..(i + 1) * od]);
                    y.extend_from_slice(&self.buf.y[i * ad..(i + 1) * ad]);
                    olp.push(self.buf.log_prob[i]);
                    a.push(adv[i]);
                    ret.push(self.buf.ret[i]);
                }
                let batch = PolicyBatch {
                    obs: &obs,
                    y: &y,
                    old_log_prob: &olp,
                    advantage: &a,
                };
                g_actor.iter_mut().for_each(|g| *g = 0.0);
                let pl = match cfg.algorithm {
                    Algorithm::A2c => a2c_loss(
                        &self.actor,
                        &self.theta,
                        &batch,
                        cfg.entropy_coef,
                        Some(&mut g_actor),
                    ),
                    _ => ppo_loss(
                        &self.actor,
                        &self.theta,
                        &batch,
                        cfg.clip_ratio,
                        cfg.entropy_coef,
                        Some(&mut g_actor),
                    ),
                };
                g_critic.iter_mut().for_each(|g| *g = 0.0);
                let vl = value_loss(
                    &self.critic,
                    &self.critic_params,
                    &obs,
                    &ret,
                    Some(&mut g_critic),
                );
                if !pl.is_finite() || !vl.is_finite() {
                    return Err(Error::Divergence(format!(
                        "policy loss {pl}, value loss {vl}"
                    )));
                }
                clip_grad_norm(&mut g_actor, cfg.max_grad_norm);
                clip_grad_norm(&mut g_critic, cfg.max_grad_norm);
                self.actor_opt.step(&mut self.theta, &g_actor);
                self.critic_opt.step(&mut self.critic_params, &g_critic);
                let n_w = self.actor.n_params();
                for ls in &mut self.theta[n_w..] {
                    *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
                }
            }
        }
        if self
            .theta
            .iter()
            .chain(&self.critic_params)
            .any(|x| !x.is_finite())
        {
            return Err(Error::Divergence(
                "non-finite parameters after update".into(),
            ));
        }
        self.buf.clear();
        Ok(())
    }
}

impl Learner for OnPolicyLearner {
    fn act(&mut self, obs: &[f64], rng: &mut SimRng) -> Result<Vec<f64>> {
        use rand_distr::{Distribution, StandardNormal};
        let n = self.actor.n_params();
        self.actor.forward(&self.theta[..n], obs, &mut self.trace);
        let mean = self.trace.output().to_vec();
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Divergence("actor produced a non-finite mean".into()));
        }
        let y: Vec<f64> = mean
            .iter()
            .zip(self.log_std())
            .map(|(m, ls)| {
                let e: f64 = StandardNormal.sample(rng);
                m + ls.exp() * e
            })
            .collect();
        let u: Vec<f64> = y.iter().map(|&v| logistic(v)).collect();
        let lp = squashed_log_prob(&y, &mean, self.log_std());
        let v = self.critic.eval(&self.critic_params, obs)[0];
        self.buf.obs.extend_from_slice(obs);
        self.buf.y.extend_from_slice(&y);
        self.buf.u.extend_from_slice(&u);
        self.buf.log_prob.push(lp);
        self.buf.value.push(v);
        self.pending = true;
        Ok(u)
    }

    fn record(&mut self, reward: f64, next_obs: &[f64], done: bool) {
        debug_assert!(self.pending);
        self.pending = false;
        self.buf.reward.push(reward * self.cfg.reward_scale);
        self.buf.done.push(done);
        let nv = if done {
            0.0
        } else {
            self.critic.eval(&self.critic_params, next_obs)[0]
        };
        self.buf.next_value.push(nv);
    }

    fn end_episode(&mut self, _episode: usize, rng: &mut SimRng) -> Result<()> {
        self.episodes_buffered += 1;
        if self.episodes_buffered >= self.cfg.episodes_per_update {
            self.episodes_buffered = 0;
            self.update(rng)?;
        }
        Ok(())
    }

    fn parameters(&self) -> PolicyParameters {
        let n = self.actor.n_params();
        PolicyParameters {
            format_version: FORMAT_VERSION,
            algorithm: self.cfg.algorithm,
            actor: self.actor.clone(),
            actor_params: self.theta[..n].to_vec(),
            log_std: self.theta[n..].to_vec(),
            critic: self.critic.clone(),
            critic_params: self.critic_params.clone(),
        }
    }
}
