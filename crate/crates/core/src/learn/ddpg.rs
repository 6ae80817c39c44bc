//! Deterministic actor-critic over unit-box actions.
//!
//! The actor emits a pre-squash vector `y` and plays `u = logistic(y)`. The
//! critic scores `(s, φ(h(u)))` where `φ` is the executed curve in normalized
//! coordinates, so the critic never sees the redundant unit-box
//! coordinates. The actor gradient is chained through [`h_mode_vjp`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::adam::{clip_grad_norm, Adam};
use super::mlp::{Mlp, Trace};
use super::policy::{logistic, PolicyParameters, FORMAT_VERSION};
use super::train::Learner;
use super::LearnerConfig;
use crate::bid_domain::StepBidCurve;
use crate::error::{Error, Result};
use crate::param_maps::{h_mode, h_mode_vjp, DpmpConfig, MapMode, UnitBoxAction};
use crate::rng::SimRng;

/// `(Q_1..Q_{K−1})/q_max ++ (p − p_min)/Δp`, length `2K − 1`.
pub fn curve_features(curve: &StepBidCurve, cfg: &DpmpConfig) -> Vec<f64> {
    let k = curve.segments();
    let dp = cfg.delta_p();
    let mut f: Vec<f64> = curve.breakpoints[1..k]
        .iter()
        .map(|q| q / cfg.q_max)
        .collect();
    f.extend(curve.prices.iter().map(|p| (p - cfg.p_min) / dp));
    f
}

pub fn feature_dim(k: usize) -> usize {
    2 * k - 1
}

/// Ring buffer of `(s, φ, r, s', done)`.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    feat_dim: usize,
    obs: Vec<f64>,
    feat: Vec<f64>,
    reward: Vec<f64>,
    next_obs: Vec<f64>,
    done: Vec<bool>,
    head: usize,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, feat_dim: usize) -> Self {
        Self {
            capacity,
            obs_dim,
            feat_dim,
            obs: Vec::new(),
            feat: Vec::new(),
            reward: Vec::new(),
            next_obs: Vec::new(),
            done: Vec::new(),
            head: 0,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, obs: &[f64], feat: &[f64], reward: f64, next_obs: &[f64], done: bool) {
        let (od, fd) = (self.obs_dim, self.feat_dim);
        if self.len < self.capacity {
            self.obs.extend_from_slice(obs);
            self.feat.extend_from_slice(feat);
            self.reward.push(reward);
            self.next_obs.extend_from_slice(next_obs);
            self.done.push(done);
            self.len += 1;
        } else {
            let i = self.head;
            self.obs[i * od..(i + 1) * od].copy_from_slice(obs);
            self.feat[i * fd..(i + 1) * fd].copy_from_slice(feat);
            self.reward[i] = reward;
            self.next_obs[i * od..(i + 1) * od].copy_from_slice(next_obs);
            self.done[i] = done;
        }
        self.head = (self.head + 1) % self.capacity;
    }
}

/// `0.5 · mean((Q(x_i) − target_i)²)` with `x_i = s_i ++ φ_i` stored flat.
pub fn critic_loss(
    critic: &Mlp,
    params: &[f64],
    inputs: &[f64],
    targets: &[f64],
    grad: Option<&mut [f64]>,
) -> f64 {
    super::on_policy::value_loss(critic, params, inputs, targets, grad)
}

/// `−mean Q(s, φ(h(logistic(μ(s)))))`, differentiated with respect to the actor only.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss(
    actor: &Mlp,
    theta: &[f64],
    critic: &Mlp,
    critic_params: &[f64],
    obs: &[f64],
    mode: MapMode,
    cfg: &DpmpConfig,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let od = actor.input_dim();
    let n = obs.len() / od;
    let k = actor.output_dim() / 2;
    let mut at = Trace::default();
    let mut ct = Trace::default();
    let mut scratch = vec![0.0; critic_params.len()];
    let mut d_in = vec![0.0; critic.input_dim()];
    let mut x = Vec::with_capacity(critic.input_dim());
    let mut loss = 0.0;
    let mut g = grad;
    for i in 0..n {
        let s = &obs[i * od..(i + 1) * od];
        actor.forward(theta, s, &mut at);
        let u: Vec<f64> = at.output().iter().map(|&y| logistic(y)).collect();
        let ua = UnitBoxAction::from_flat(&u)?;
        let curve = h_mode(&ua, mode, cfg)?;
        x.clear();
        x.extend_from_slice(s);
        x.extend(curve_features(&curve, cfg));
        critic.forward(critic_params, &x, &mut ct);
        loss -= ct.output()[0] / n as f64;
        if let Some(g) = g.as_deref_mut() {
            critic.backward(
                critic_params,
                &ct,
                &[-1.0 / n as f64],
                &mut scratch,
                Some(&mut d_in),
            );
            let df = &d_in[od..];
            let g_breaks: Vec<f64> = df[..k - 1].iter().map(|v| v / cfg.q_max).collect();
            let g_prices: Vec<f64> = df[k - 1..].iter().map(|v| v / cfg.delta_p()).collect();
            let gu = h_mode_vjp(&ua, mode, cfg, &g_breaks, &g_prices)?.to_flat();
            let gy: Vec<f64> = gu.iter().zip(&u).map(|(g, u)| g * u * (1.0 - u)).collect();
            actor.backward(theta, &at, &gy, g, None);
        }
    }
    Ok(loss)
}

fn soft_update(target: &mut [f64], source: &[f64], tau: f64) {
    for (t, s) in target.iter_mut().zip(source) {
        *t += tau * (s - *t);
    }
}

pub struct DdpgLearner {
    cfg: LearnerConfig,
    mode: MapMode,
    map_cfg: DpmpConfig,
    actor: Mlp,
    critic: Mlp,
    theta: Vec<f64>,
    critic_params: Vec<f64>,
    target_theta: Vec<f64>,
    target_critic: Vec<f64>,
    actor_opt: Adam,
    critic_opt: Adam,
    replay: ReplayBuffer,
    last: Option<(Vec<f64>, Vec<f64>)>,
    episode: usize,
    noise: f64,
    trace: Trace,
}

impl DdpgLearner {
    pub fn new(
        cfg: &LearnerConfig,
        obs_dim: usize,
        segments: usize,
        mode: MapMode,
        map_cfg: &DpmpConfig,
        init: Option<&PolicyParameters>,
        rng: &mut SimRng,
    ) -> Result<Self> {
        let act_dim = 2 * segments;
        let fd = feature_dim(segments);
        let (actor, critic, theta, critic_params) = match init {
            Some(p) => {
                if p.obs_dim() != obs_dim
                    || p.action_dim() != act_dim
                    || p.critic.input_dim() != obs_dim + fd
                {
                    return Err(Error::Config(
                        "initial parameters do not fit the environment".into(),
                    ));
                }
                (
                    p.actor.clone(),
                    p.critic.clone(),
                    p.actor_params.clone(),
                    p.critic_params.clone(),
                )
            }
            None => {
                let actor = Mlp::new(obs_dim, &cfg.hidden, act_dim);
                let critic = Mlp::new(obs_dim + fd, &cfg.hidden, 1);
                let theta = actor.init(rng, cfg.actor_out_scale);
                let cp = critic.init(rng, 1.0);
                (actor, critic, theta, cp)
            }
        };
        Ok(Self {
            actor_opt: Adam::new(theta.len(), cfg.actor_lr),
            critic_opt: Adam::new(critic_params.len(), cfg.critic_lr),
            replay: ReplayBuffer::new(cfg.replay_capacity, obs_dim, fd),
            target_theta: theta.clone(),
            target_critic: critic_params.clone(),
            cfg: cfg.clone(),
            mode,
            map_cfg: map_cfg.clone(),
            actor,
            critic,
            theta,
            critic_params,
            last: None,
            episode: 0,
            noise: cfg.noise_start,
            trace: Trace::default(),
        })
    }

    fn features(&self, u: &[f64]) -> Result<Vec<f64>> {
        let curve = h_mode(&UnitBoxAction::from_flat(u)?, self.mode, &self.map_cfg)?;
        Ok(curve_features(&curve, &self.map_cfg))
    }

    fn update(&mut self, rng: &mut SimRng) -> Result<()> {
        let (od, fd) = (self.replay.obs_dim, self.replay.feat_dim);
        let b = self.cfg.batch_size.min(self.replay.len());
        let mut inputs = Vec::with_capacity(b * (od + fd));
        let mut obs = Vec::with_capacity(b * od);
        let mut targets = Vec::with_capacity(b);
        let mut x = Vec::with_capacity(od + fd);
        for _ in 0..b {
            let i = rng.random_range(0..self.replay.len());
            let s = &self.replay.obs[i * od..(i + 1) * od];
            inputs.extend_from_slice(s);
            inputs.extend_from_slice(&self.replay.feat[i * fd..(i + 1) * fd]);
            obs.extend_from_slice(s);
            let mut y = self.replay.reward[i];
            if !self.replay.done[i] {
                let s2 = &self.replay.next_obs[i * od..(i + 1) * od];
                let u2: Vec<f64> = self
                    .actor
                    .eval(&self.target_theta, s2)
                    .into_iter()
                    .map(logistic)
                    .collect();
                x.clear();
                x.extend_from_slice(s2);
                x.extend(self.features(&u2)?);
                y += self.cfg.discount * self.critic.eval(&self.target_critic, &x)[0];
            }
            targets.push(y);
        }
        let mut gc = vec![0.0; self.critic_params.len()];
        let cl = critic_loss(
            &self.critic,
            &self.critic_params,
            &inputs,
            &targets,
            Some(&mut gc),
        );
        clip_grad_norm(&mut gc, self.cfg.max_grad_norm);
        self.critic_opt.step(&mut self.critic_params, &gc);

        let mut ga = vec![0.0; self.theta.len()];
        let al = actor_loss(
            &self.actor,
            &self.theta,
            &self.critic,
            &self.critic_params,
            &obs,
            self.mode,
            &self.map_cfg,
            Some(&mut ga),
        )?;
        clip_grad_norm(&mut ga, self.cfg.max_grad_norm);
        self.actor_opt.step(&mut self.theta, &ga);
        if !cl.is_finite() || !al.is_finite() {
            return Err(Error::Divergence(format!(
                "critic loss {cl}, actor loss {al}"
            )));
        }
        soft_update(&mut self.target_theta, &self.theta, self.cfg.tau);
        soft_update(&mut self.target_critic, &self.critic_params, self.cfg.tau);
        Ok(())
    }
}

impl Learner for DdpgLearner {
    fn act(&mut self, obs: &[f64], rng: &mut SimRng) -> Result<Vec<f64>> {
        let u: Vec<f64> = if self.episode < self.cfg.warmup_episodes {
            (0..self.actor.output_dim())
                .map(|_| logistic(rng.random_range(-4.0..4.0)))
                .collect()
        } else {
            self.actor.forward(&self.theta, obs, &mut self.trace);
            let out = self.trace.output();
            if out.iter().any(|y| !y.is_finite()) {
                return Err(Error::Divergence(
                    "actor produced a non-finite action".into(),
                ));
            }
            out.iter()
                .map(|&y| {
                    let e: f64 = StandardNormal.sample(rng);
                    logistic(y + self.noise * e)
                })
                .collect()
        };
        self.last = Some((obs.to_vec(), u.clone()));
        Ok(u)
    }

    fn record(&mut self, reward: f64, next_obs: &[f64], done: bool) {
        if let Some((obs, u)) = self.last.take() {
            if let Ok(f) = self.features(&u) {
                self.replay
                    .push(&obs, &f, reward * self.cfg.reward_scale, next_obs, done);
            }
        }
    }

    fn end_episode(&mut self, _episode: usize, rng: &mut SimRng) -> Result<()> {
        self.episode += 1;
        let span = self
            .cfg
            .episodes
            .saturating_sub(self.cfg.warmup_episodes)
            .max(1) as f64;
        let frac = (self.episode.saturating_sub(self.cfg.warmup_episodes) as f64 / span).min(1.0);
        self.noise = self.cfg.noise_start + (self.cfg.noise_end - self.cfg.noise_start) * frac;
        if self.episode >= self.cfg.warmup_episodes && self.replay.len() >= self.cfg.batch_size {
            for _ in 0..self.cfg.updates_per_episode {
                self.update(rng)?;
            }
        }
        Ok(())
    }

    fn parameters(&self) -> PolicyParameters {
        PolicyParameters {
            format_version: FORMAT_VERSION,
            algorithm: self.cfg.algorithm,
            actor: self.actor.clone(),
            actor_params: self.theta.clone(),
            log_std: Vec::new(),
            critic: self.critic.clone(),
            critic_params: self.critic_params.clone(),
        }
    }
}
