//! Action-to-bid mappings.
//!
//! Four mappings share the interface [`h_mode`]: the dual-positive monotone
//! parameterization (DPMP) and three post-hoc repairs of an unconstrained price
//! vector (sorting, cumulative max clipping, Euclidean projection). The baselines
//! ignore the quantity half of the action and use equally spaced breakpoints.
//!
//! DPMP comes in two forms. [`DualPositiveAction`] `(r, w)` maps through
//! `λ = r/Σr`, `Q = q_max·cumsum(λ)`, `s = cumsum(w)`,
//! `p = p_min + Δp·(1 − e^{−α s})`. [`UnitBoxAction`] `(u_q, u_p)` maps through
//! `λ = softmax(u_q)` and `s = k·cumsum(u_p)` and is what the learners emit.
//! In the unit-box form only the product `k·α` matters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bid_domain::StepBidCurve;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualPositiveAction {
    pub r: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitBoxAction {
    pub u_q: Vec<f64>,
    pub u_p: Vec<f64>,
}

impl UnitBoxAction {
    pub fn segments(&self) -> usize {
        self.u_p.len()
    }

    /// Builds from a flat `[u_q.., u_p..]` vector of even length.
    pub fn from_flat(u: &[f64]) -> Result<Self> {
        if u.is_empty() || u.len() % 2 != 0 {
            return Err(Error::Structural(format!(
                "flat unit-box action needs even length, got {}",
                u.len()
            )));
        }
        let k = u.len() / 2;
        Ok(Self {
            u_q: u[..k].to_vec(),
            u_p: u[k..].to_vec(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.u_q.iter().chain(&self.u_p).copied().collect()
    }

    pub fn check(&self) -> Result<()> {
        if self.u_q.len() != self.u_p.len() || self.u_p.is_empty() {
            return Err(Error::Structural(format!(
                "u_q and u_p need equal nonzero length, got {} and {}",
                self.u_q.len(),
                self.u_p.len()
            )));
        }
        if let Some(x) = self
            .u_q
            .iter()
            .chain(&self.u_p)
            .find(|&&x| !(x > 0.0 && x < 1.0))
        {
            return Err(Error::Domain(format!(
                "unit-box entry {x} not strictly inside (0,1)"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpmpConfig {
    pub k_scale: f64,
    pub alpha: f64,
    pub q_max: f64,
    pub p_min: f64,
    pub p_max: f64,
}

impl DpmpConfig {
    pub fn delta_p(&self) -> f64 {
        self.p_max - self.p_min
    }

    pub fn check(&self) -> Result<()> {
        let ok = self.k_scale > 0.0
            && self.alpha > 0.0
            && self.q_max > 0.0
            && self.p_max > self.p_min
            && [self.k_scale, self.alpha, self.q_max, self.p_min, self.p_max]
                .iter()
                .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid DPMP configuration {self:?}"
            )))
        }
    }
}

/// `(λ̄, w)`: the first `K−1` segment fractions and the `K` price increments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonRedundantCoords {
    pub lambda_bar: Vec<f64>,
    pub w: Vec<f64>,
}

impl NonRedundantCoords {
    pub fn check(&self) -> Result<()> {
        if self.w.is_empty() || self.lambda_bar.len() + 1 != self.w.len() {
            return Err(Error::Structural(format!(
                "need K-1 fractions for K increments, got {} and {}",
                self.lambda_bar.len(),
                self.w.len()
            )));
        }
        let sum: f64 = self.lambda_bar.iter().sum();
        if self.lambda_bar.iter().any(|&l| !(l > 0.0)) || !(sum < 1.0) {
            return Err(Error::Domain(
                "fractions must be positive with sum below 1".into(),
            ));
        }
        if self.w.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Domain(
                "increments must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MapMode {
    Dpmp,
    Sort,
    Clip,
    Project,
}

impl MapMode {
    pub const ALL: [MapMode; 4] = [
        MapMode::Dpmp,
        MapMode::Sort,
        MapMode::Clip,
        MapMode::Project,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MapMode::Dpmp => "DPMP",
            MapMode::Sort => "SORT",
            MapMode::Clip => "CLIP",
            MapMode::Project => "PROJECT",
        }
    }
}

impl fmt::Display for MapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DPMP" => Ok(MapMode::Dpmp),
            "SORT" => Ok(MapMode::Sort),
            "CLIP" => Ok(MapMode::Clip),
            "PROJECT" | "PROJ" => Ok(MapMode::Project),
            _ => Err(Error::Config(format!("unknown mapping mode {s:?}"))),
        }
    }
}

/// Inputs accepted by [`dpmp_forward`].
pub trait DpmpInput {
    fn to_curve(&self, cfg: &DpmpConfig) -> Result<StepBidCurve>;
}

impl DpmpInput for DualPositiveAction {
    fn to_curve(&self, cfg: &DpmpConfig) -> Result<StepBidCurve> {
        cfg.check()?;
        if self.r.is_empty() || self.r.len() != self.w.len() {
            return Err(Error::Structural(format!(
                "r and w need equal nonzero length, got {} and {}",
                self.r.len(),
                self.w.len()
            )));
        }
        if let Some(x) = self
            .r
            .iter()
            .chain(&self.w)
            .find(|&&x| !(x > 0.0 && x.is_finite()))
        {
            return Err(Error::Domain(format!(
                "dual-positive entry {x} is not strictly positive"
            )));
        }
        let total: f64 = self.r.iter().sum();
        let lambda: Vec<f64> = self.r.iter().map(|r| r / total).collect();
        let s = cumsum(&self.w);
        Ok(assemble(&lambda, &s, cfg))
    }
}

impl DpmpInput for UnitBoxAction {
    fn to_curve(&self, cfg: &DpmpConfig) -> Result<StepBidCurve> {
        cfg.check()?;
        self.check()?;
        let lambda = softmax(&self.u_q);
        let s: Vec<f64> = cumsum(&self.u_p)
            .into_iter()
            .map(|x| cfg.k_scale * x)
            .collect();
        Ok(assemble(&lambda, &s, cfg))
    }
}

pub fn dpmp_forward(action: &impl DpmpInput, cfg: &DpmpConfig) -> Result<StepBidCurve> {
    action.to_curve(cfg)
}

/// Forward map on non-redundant coordinates, `λ_K = 1 − Σλ̄`.
pub fn dpmp_from_coords(coords: &NonRedundantCoords, cfg: &DpmpConfig) -> Result<StepBidCurve> {
    cfg.check()?;
    coords.check()?;
    let mut lambda = coords.lambda_bar.clone();
    lambda.push(1.0 - coords.lambda_bar.iter().sum::<f64>());
    Ok(assemble(&lambda, &cumsum(&coords.w), cfg))
}

fn assemble(lambda: &[f64], s: &[f64], cfg: &DpmpConfig) -> StepBidCurve {
    let k = lambda.len();
    let mut breakpoints = Vec::with_capacity(k + 1);
    breakpoints.push(0.0);
    let mut acc = 0.0;
    for &l in &lambda[..k - 1] {
        acc += l;
        breakpoints.push(cfg.q_max * acc);
    }
    breakpoints.push(cfg.q_max);
    let dp = cfg.delta_p();
    let prices = s
        .iter()
        .map(|&si| cfg.p_min + dp * -(-cfg.alpha * si).exp_m1())
        .collect();
    StepBidCurve {
        breakpoints,
        prices,
        q_max: cfg.q_max,
        p_min: cfg.p_min,
        p_max: cfg.p_max,
    }
}

/// Recovers `(λ̄, w)` from an interior curve by differencing.
pub fn dpmp_inverse(curve: &StepBidCurve, cfg: &DpmpConfig) -> Result<NonRedundantCoords> {
    cfg.check()?;
    let k = curve.segments();
    if curve.breakpoints.len() != k + 1 || k == 0 {
        return Err(Error::Structural(
            "breakpoints must have K+1 entries".into(),
        ));
    }
    let mut lambda_bar = Vec::with_capacity(k - 1);
    for i in 1..k {
        let l = (curve.breakpoints[i] - curve.breakpoints[i - 1]) / cfg.q_max;
        if !(l > 0.0) {
            return Err(Error::Inversion(format!("segment {i} has zero width")));
        }
        lambda_bar.push(l);
    }
    if !(curve.breakpoints[k] - curve.breakpoints[k - 1] > 0.0) {
        return Err(Error::Inversion(format!("segment {k} has zero width")));
    }
    let dp = cfg.delta_p();
    let mut w = Vec::with_capacity(k);
    let mut prev = 0.0;
    for (i, &p) in curve.prices.iter().enumerate() {
        let frac = (p - cfg.p_min) / dp;
        if !(frac > 0.0 && frac < 1.0) {
            return Err(Error::Inversion(format!(
                "price p_{} = {p} touches the price bounds",
                i + 1
            )));
        }
        let s = -(-frac).ln_1p() / cfg.alpha;
        let wi = s - prev;
        if !(wi > 0.0) {
            return Err(Error::Inversion(format!("plateau at price p_{}", i + 1)));
        }
        w.push(wi);
        prev = s;
    }
    Ok(NonRedundantCoords { lambda_bar, w })
}

/// `det J = q_max^{K−1} · (α Δp)^K · Π_i e^{−α s_i}` with `s = cumsum(w)`.
pub fn dpmp_jacobian_det(coords: &NonRedundantCoords, cfg: &DpmpConfig) -> f64 {
    dpmp_log_jacobian_det(coords, cfg).exp()
}

pub fn dpmp_log_jacobian_det(coords: &NonRedundantCoords, cfg: &DpmpConfig) -> f64 {
    let k = coords.w.len() as f64;
    let s_total: f64 = cumsum(&coords.w).iter().sum();
    (k - 1.0) * cfg.q_max.ln() + k * (cfg.alpha * cfg.delta_p()).ln() - cfg.alpha * s_total
}

fn equal_breakpoints(k: usize, q_max: f64) -> Vec<f64> {
    let mut q: Vec<f64> = (0..=k).map(|i| i as f64 * q_max / k as f64).collect();
    q[k] = q_max;
    q
}

fn baseline_curve(prices: Vec<f64>, q_max: f64, p_max: f64) -> StepBidCurve {
    StepBidCurve {
        breakpoints: equal_breakpoints(prices.len(), q_max),
        prices,
        q_max,
        p_min: 0.0,
        p_max,
    }
}

/// Equally spaced breakpoints, prices `sort(p_max·u_p)`.
pub fn sort_map(u: &UnitBoxAction, q_max: f64, p_max: f64) -> StepBidCurve {
    let mut p: Vec<f64> = u.u_p.iter().map(|x| p_max * x).collect();
    p.sort_by(f64::total_cmp);
    baseline_curve(p, q_max, p_max)
}

/// Equally spaced breakpoints, prices `cummax(p_max·u_p)`.
pub fn clip_map(u: &UnitBoxAction, q_max: f64, p_max: f64) -> StepBidCurve {
    let mut p: Vec<f64> = u.u_p.iter().map(|x| p_max * x).collect();
    for i in 1..p.len() {
        p[i] = p[i].max(p[i - 1]);
    }
    baseline_curve(p, q_max, p_max)
}

/// Equally spaced breakpoints, prices = L2 projection of `p_max·u_p` onto
/// `{0 ≤ p_1 ≤ … ≤ p_K ≤ p_max}`.
pub fn project_map(u: &UnitBoxAction, q_max: f64, p_max: f64) -> StepBidCurve {
    let x: Vec<f64> = u.u_p.iter().map(|v| p_max * v).collect();
    baseline_curve(project_monotone_box(&x, 0.0, p_max), q_max, p_max)
}

/// Projection onto the bounded monotone cone: isotonic regression, then clip.
pub fn project_monotone_box(x: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    pav(x).into_iter().map(|v| v.clamp(lo, hi)).collect()
}

/// Unweighted isotonic regression (nondecreasing) by pool-adjacent-violators.
pub fn pav(x: &[f64]) -> Vec<f64> {
    pav_blocks(x)
        .iter()
        .flat_map(|b| std::iter::repeat_n(b.mean, b.len))
        .collect()
}

#[derive(Clone, Copy, Debug)]
struct Block {
    mean: f64,
    len: usize,
}

fn pav_blocks(x: &[f64]) -> Vec<Block> {
    let mut blocks: Vec<Block> = Vec::with_capacity(x.len());
    for &v in x {
        let mut cur = Block { mean: v, len: 1 };
        while let Some(last) = blocks.last() {
            if last.mean <= cur.mean {
                break;
            }
            let n = last.len + cur.len;
            cur = Block {
                mean: (last.mean * last.len as f64 + cur.mean * cur.len as f64) / n as f64,
                len: n,
            };
            blocks.pop();
        }
        blocks.push(cur);
    }
    blocks
}

/// Unified post-processing: `u ↦ curve` for the chosen mode.
pub fn h_mode(u: &UnitBoxAction, mode: MapMode, cfg: &DpmpConfig) -> Result<StepBidCurve> {
    match mode {
        MapMode::Dpmp => dpmp_forward(u, cfg),
        _ => {
            u.check()?;
            Ok(match mode {
                MapMode::Sort => sort_map(u, cfg.q_max, cfg.p_max),
                MapMode::Clip => clip_map(u, cfg.q_max, cfg.p_max),
                MapMode::Project => project_map(u, cfg.q_max, cfg.p_max),
                MapMode::Dpmp => unreachable!(),
            })
        }
    }
}

/// Vector-Jacobian product of [`h_mode`].
///
/// `g_breaks` is the cotangent of the interior breakpoints `Q_1..Q_{K−1}` and
/// `g_prices` of `p_1..p_K`. Returns the cotangent of `(u_q, u_p)`. At kinks of
/// the baselines the gradient of the active branch is used.
pub fn h_mode_vjp(
    u: &UnitBoxAction,
    mode: MapMode,
    cfg: &DpmpConfig,
    g_breaks: &[f64],
    g_prices: &[f64],
) -> Result<UnitBoxAction> {
    u.check()?;
    let k = u.segments();
    if g_breaks.len() + 1 != k || g_prices.len() != k {
        return Err(Error::Structural(
            "cotangent lengths must be K-1 and K".into(),
        ));
    }
    let mut g_uq = vec![0.0; k];
    let mut g_up = vec![0.0; k];
    match mode {
        MapMode::Dpmp => {
            // Q_i = q_max Σ_{j≤i} λ_j for i < K.
            let lambda = softmax(&u.u_q);
            let mut g_lambda = vec![0.0; k];
            let mut acc = 0.0;
            for j in (0..k).rev() {
                if j < k - 1 {
                    acc += g_breaks[j];
                }
                g_lambda[j] = cfg.q_max * acc;
            }
            let dot: f64 = lambda.iter().zip(&g_lambda).map(|(l, g)| l * g).sum();
            for j in 0..k {
                g_uq[j] = lambda[j] * (g_lambda[j] - dot);
            }
            let s: Vec<f64> = cumsum(&u.u_p)
                .into_iter()
                .map(|x| cfg.k_scale * x)
                .collect();
            let scale = cfg.delta_p() * cfg.alpha;
            let mut acc = 0.0;
            for j in (0..k).rev() {
                acc += g_prices[j] * scale * (-cfg.alpha * s[j]).exp();
                g_up[j] = cfg.k_scale * acc;
            }
        }
        MapMode::Sort => {
            let mut idx: Vec<usize> = (0..k).collect();
            idx.sort_by(|&a, &b| u.u_p[a].total_cmp(&u.u_p[b]));
            for (rank, &src) in idx.iter().enumerate() {
                g_up[src] = cfg.p_max * g_prices[rank];
            }
        }
        MapMode::Clip => {
            let mut arg = 0;
            for i in 0..k {
                if u.u_p[i] > u.u_p[arg] {
                    arg = i;
                }
                g_up[arg] += cfg.p_max * g_prices[i];
            }
        }
        MapMode::Project => {
            let x: Vec<f64> = u.u_p.iter().map(|v| cfg.p_max * v).collect();
            let mut start = 0;
            for b in pav_blocks(&x) {
                if b.mean > 0.0 && b.mean < cfg.p_max {
                    let g: f64 = g_prices[start..start + b.len].iter().sum::<f64>() / b.len as f64;
                    for slot in &mut g_up[start..start + b.len] {
                        *slot = cfg.p_max * g;
                    }
                }
                start += b.len;
            }
        }
    }
    Ok(UnitBoxAction {
        u_q: g_uq,
        u_p: g_up,
    })
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn cumsum(x: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    x.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}
