//! Diagnostics for the three necessary conditions on a post-processing map:
//! no singular probability mass (NC1), injectivity on non-redundant
//! coordinates (NC2) and a nonsingular Jacobian there (NC3).
//!
//! The checks treat each mapping as a black box `u ↦ curve`. Conditions are
//! stated per state in the learning problem, but the mappings here do not see
//! the state, so they are verified state-free.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bid_domain::StepBidCurve;
use crate::error::{Error, Result};
use crate::param_maps::{
    dpmp_from_coords, dpmp_jacobian_det, h_mode, DpmpConfig, MapMode, NonRedundantCoords,
    UnitBoxAction,
};
use crate::rng::{self, SimRng};

/// Absolute tolerance for equality events. Genuine atoms come out of `max` and
/// pooling as (nearly) bitwise-equal doubles.
pub const EVENT_TOL: f64 = 1e-12;

/// Smallest sample size accepted by [`estimate_atom_mass`].
pub const MIN_SAMPLES: usize = 100;

const WILSON_Z: f64 = 1.959_963_984_540_054;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSampler {
    /// iid Uniform(0,1) on every coordinate.
    Uniform,
    /// `logistic(N(mean, std²))` on every coordinate, the learners' head.
    LogisticGaussian { mean: f64, std: f64 },
}

impl InputSampler {
    pub fn sample(&self, k: usize, rng: &mut SimRng) -> UnitBoxAction {
        let mut draw = || loop {
            let x = match *self {
                InputSampler::Uniform => rng.random::<f64>(),
                InputSampler::LogisticGaussian { mean, std } => {
                    let y: f64 = Normal::new(mean, std).expect("std validated").sample(rng);
                    1.0 / (1.0 + (-y).exp())
                }
            };
            if x > 0.0 && x < 1.0 {
                return x;
            }
        };
        let u_q = (0..k).map(|_| draw()).collect();
        let u_p = (0..k).map(|_| draw()).collect();
        UnitBoxAction { u_q, u_p }
    }
}

/// Measurable events on curves. Indices are 1-based like `p_1..p_K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", content = "index", rename_all = "snake_case")]
pub enum CurveEvent {
    /// `p_i = p_{i−1}`, `i ≥ 2`.
    PriceTie(usize),
    PriceAtMax(usize),
    PriceAtMin(usize),
    /// `Q_i = Q_{i−1}`, a zero-width segment.
    ZeroWidth(usize),
}

impl CurveEvent {
    pub fn id(&self) -> String {
        match self {
            CurveEvent::PriceTie(i) => format!("p{i}=p{}", i - 1),
            CurveEvent::PriceAtMax(i) => format!("p{i}=p_max"),
            CurveEvent::PriceAtMin(i) => format!("p{i}=p_min"),
            CurveEvent::ZeroWidth(i) => format!("Q{i}=Q{}", i - 1),
        }
    }

    pub fn holds(&self, c: &StepBidCurve) -> bool {
        match *self {
            CurveEvent::PriceTie(i) => (c.prices[i - 1] - c.prices[i - 2]).abs() <= EVENT_TOL,
            CurveEvent::PriceAtMax(i) => (c.prices[i - 1] - c.p_max).abs() <= EVENT_TOL,
            CurveEvent::PriceAtMin(i) => (c.prices[i - 1] - c.p_min).abs() <= EVENT_TOL,
            CurveEvent::ZeroWidth(i) => {
                (c.breakpoints[i] - c.breakpoints[i - 1]).abs() <= EVENT_TOL
            }
        }
    }

    fn check(&self, k: usize) -> Result<()> {
        let ok = match *self {
            CurveEvent::PriceTie(i) => (2..=k).contains(&i),
            CurveEvent::PriceAtMax(i) | CurveEvent::PriceAtMin(i) | CurveEvent::ZeroWidth(i) => {
                (1..=k).contains(&i)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "event {self:?} out of range for K = {k}"
            )))
        }
    }

    /// Every tie, boundary and zero-width event for `K` segments.
    pub fn all(k: usize) -> Vec<CurveEvent> {
        let mut v: Vec<CurveEvent> = (2..=k).map(CurveEvent::PriceTie).collect();
        v.extend((1..=k).map(CurveEvent::PriceAtMax));
        v.extend((1..=k).map(CurveEvent::PriceAtMin));
        v.extend((1..=k).map(CurveEvent::ZeroWidth));
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomEstimate {
    pub event: String,
    pub probability: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub hits: u64,
    pub samples: u64,
}

/// Wilson score interval at 95%.
pub fn wilson_interval(hits: u64, n: u64) -> (f64, f64) {
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // The bounds are exact at the ends; the formula only rounds to them.
    let lo = if hits == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let hi = if p == 1.0 {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (lo, hi)
}

/// Monte Carlo frequency of each event over mapped samples.
pub fn estimate_atom_mass(
    mode: MapMode,
    cfg: &DpmpConfig,
    k: usize,
    sampler: InputSampler,
    events: &[CurveEvent],
    n_samples: usize,
    rng: &mut SimRng,
) -> Result<Vec<AtomEstimate>> {
    if n_samples < MIN_SAMPLES {
        return Err(Error::Domain(format!(
            "{n_samples} samples is below the minimum of {MIN_SAMPLES}"
        )));
    }
    if let InputSampler::LogisticGaussian { std, .. } = sampler {
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::Domain(format!(
                "sampler std must be positive, got {std}"
            )));
        }
    }
    for e in events {
        e.check(k)?;
    }
    let mut hits = vec![0u64; events.len()];
    for _ in 0..n_samples {
        let curve = h_mode(&sampler.sample(k, rng), mode, cfg)?;
        for (h, e) in hits.iter_mut().zip(events) {
            if e.holds(&curve) {
                *h += 1;
            }
        }
    }
    Ok(events
        .iter()
        .zip(hits)
        .map(|(e, h)| {
            let (lo, hi) = wilson_interval(h, n_samples as u64);
            AtomEstimate {
                event: e.id(),
                probability: h as f64 / n_samples as f64,
                wilson_lo: lo,
                wilson_hi: hi,
                hits: h,
                samples: n_samples as u64,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Multiplicity {
    /// Distinct actions found with the base action's curve, the base included.
    pub distinct: u64,
    pub probes: u64,
}

fn same_curve(a: &StepBidCurve, b: &StepBidCurve) -> bool {
    let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= EVENT_TOL);
    close(&a.breakpoints, &b.breakpoints) && close(&a.prices, &b.prices)
}

/// Counts distinct actions mapping to the curve of `base`.
///
/// SORT permutes the price block: every permutation for `K ≤ 8`, random
/// shuffles above. All other
/// cases draw `n_probes` perturbations of the non-redundant coordinates: single
/// coordinate moves and mass-preserving transfers between two coordinates.
/// Baselines ignore `u_q`, so only the price block is perturbed for them.
pub fn preimage_multiplicity(
    mode: MapMode,
    cfg: &DpmpConfig,
    base: &UnitBoxAction,
    n_probes: usize,
    rng: &mut SimRng,
) -> Result<Multiplicity> {
    let target = h_mode(base, mode, cfg)?;
    let k = base.segments();
    if mode == MapMode::Sort {
        // Exhaustive for K ≤ 8, otherwise n_probes random shuffles.
        let exhaustive = k <= 8;
        let mut perm: Vec<usize> = (0..k).collect();
        let mut seen: HashSet<Vec<u64>> = HashSet::new();
        let mut probes = 0u64;
        loop {
            let u_p: Vec<f64> = perm.iter().map(|&i| base.u_p[i]).collect();
            let key: Vec<u64> = u_p.iter().map(|x| x.to_bits()).collect();
            let probe = UnitBoxAction {
                u_q: base.u_q.clone(),
                u_p,
            };
            probes += 1;
            let out = h_mode(&probe, mode, cfg)?;
            let equal = out
                .prices
                .iter()
                .zip(&target.prices)
                .all(|(a, b)| a.to_bits() == b.to_bits())
                && out.breakpoints == target.breakpoints;
            if equal {
                seen.insert(key);
            }
            if exhaustive {
                if !next_permutation(&mut perm) {
                    break;
                }
            } else {
                if probes as usize >= n_probes {
                    break;
                }
                perm.shuffle(rng);
            }
        }
        return Ok(Multiplicity {
            distinct: seen.len() as u64,
            probes,
        });
    }

    // Flat layout is [u_q.., u_p..].
    let coords: Vec<usize> = if mode == MapMode::Dpmp {
        (0..2 * k).collect()
    } else {
        (k..2 * k).collect()
    };
    let flat = base.to_flat();
    let mut matches = 0u64;
    for _ in 0..n_probes {
        let mut probe = flat.clone();
        let step = rng.random_range(1e-4..2e-2) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let first = coords[rng.random_range(0..coords.len())];
        probe[first] += step;
        if coords.len() > 1 && rng.random::<bool>() {
            let mut second = first;
            while second == first {
                second = coords[rng.random_range(0..coords.len())];
            }
            probe[second] -= step;
        }
        let probe = UnitBoxAction::from_flat(&probe)?;
        if probe.check().is_err() {
            continue;
        }
        if same_curve(&h_mode(&probe, mode, cfg)?, &target) {
            matches += 1;
        }
    }
    Ok(Multiplicity {
        distinct: 1 + matches,
        probes: n_probes as u64,
    })
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// A map from non-redundant coordinates to the free coordinates of a curve.
pub trait NonRedundantMap {
    fn dim(&self) -> usize;
    fn eval(&self, z: &[f64]) -> Result<Vec<f64>>;
    fn analytic_det(&self, _z: &[f64]) -> Option<f64> {
        None
    }
}

/// DPMP on `(λ̄, w)`, output `(Q_1..Q_{K−1}, p_1..p_K)`.
pub struct DpmpChart {
    pub cfg: DpmpConfig,
    pub k: usize,
}

impl DpmpChart {
    fn coords(&self, z: &[f64]) -> NonRedundantCoords {
        NonRedundantCoords {
            lambda_bar: z[..self.k - 1].to_vec(),
            w: z[self.k - 1..].to_vec(),
        }
    }
}

impl NonRedundantMap for DpmpChart {
    fn dim(&self) -> usize {
        2 * self.k - 1
    }

    fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        let c = dpmp_from_coords(&self.coords(z), &self.cfg)?;
        Ok(free_coords(&c))
    }

    fn analytic_det(&self, z: &[f64]) -> Option<f64> {
        Some(dpmp_jacobian_det(&self.coords(z), &self.cfg))
    }
}

/// The unit-box mapping of `mode` restricted to its non-redundant coordinates.
///
/// For DPMP the softmax is translation invariant, so `u_q[K−1]` is pinned and
/// `z = (u_q[0..K−1], u_p)`, output `(Q_1..Q_{K−1}, p)`. The baselines ignore
/// `u_q`, so `z = u_p` and the output is `p`.
pub struct UnitChart {
    pub mode: MapMode,
    pub cfg: DpmpConfig,
    pub base: UnitBoxAction,
}

impl UnitChart {
    pub fn point(&self) -> Vec<f64> {
        match self.mode {
            MapMode::Dpmp => {
                let k = self.base.segments();
                self.base.u_q[..k - 1]
                    .iter()
                    .chain(&self.base.u_p)
                    .copied()
                    .collect()
            }
            _ => self.base.u_p.clone(),
        }
    }

    fn action(&self, z: &[f64]) -> UnitBoxAction {
        let mut a = self.base.clone();
        let k = a.segments();
        match self.mode {
            MapMode::Dpmp => {
                a.u_q[..k - 1].copy_from_slice(&z[..k - 1]);
                a.u_p.copy_from_slice(&z[k - 1..]);
            }
            _ => a.u_p.copy_from_slice(z),
        }
        a
    }
}

impl NonRedundantMap for UnitChart {
    fn dim(&self) -> usize {
        match self.mode {
            MapMode::Dpmp => 2 * self.base.segments() - 1,
            _ => self.base.segments(),
        }
    }

    fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        let c = h_mode(&self.action(z), self.mode, &self.cfg)?;
        Ok(match self.mode {
            MapMode::Dpmp => free_coords(&c),
            _ => c.prices,
        })
    }
}

fn free_coords(c: &StepBidCurve) -> Vec<f64> {
    let k = c.segments();
    c.breakpoints[1..k]
        .iter()
        .chain(&c.prices)
        .copied()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankProbe {
    pub min_singular_value: f64,
    pub max_singular_value: f64,
    pub abs_det: f64,
    /// Rank deficient within tolerance, or sitting on a kink.
    pub degenerate: bool,
    /// Coordinates whose one-sided differences disagree.
    pub kinks: Vec<usize>,
    /// Analytic determinant where one exists (DPMP), for comparison.
    pub analytic_det: Option<f64>,
}

/// Central finite differences with step `fd_step`.
pub fn numerical_jacobian(
    map: &dyn NonRedundantMap,
    z: &[f64],
    fd_step: f64,
) -> Result<DMatrix<f64>> {
    Ok(jacobian_with_kinks(map, z, fd_step)?.0)
}

fn jacobian_with_kinks(
    map: &dyn NonRedundantMap,
    z: &[f64],
    h: f64,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let n = map.dim();
    if z.len() != n {
        return Err(Error::Structural(format!(
            "point has {} coordinates, map needs {n}",
            z.len()
        )));
    }
    let f0 = map.eval(z)?;
    let m = f0.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut kinks = Vec::new();
    let mut zp = z.to_vec();
    for j in 0..n {
        zp[j] = z[j] + h;
        let fp = map.eval(&zp)?;
        zp[j] = z[j] - h;
        let fm = map.eval(&zp)?;
        zp[j] = z[j];
        let mut kinked = false;
        for i in 0..m {
            let fwd = (fp[i] - f0[i]) / h;
            let bwd = (f0[i] - fm[i]) / h;
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            let scale = 1.0 + fwd.abs().max(bwd.abs());
            if (fwd - bwd).abs() > 1e-2 * scale {
                kinked = true;
            }
        }
        if kinked {
            kinks.push(j);
        }
    }
    Ok((jac, kinks))
}

/// Numerical Jacobian spectrum of a non-redundant map at `z`.
pub fn jacobian_rank_probe(
    map: &dyn NonRedundantMap,
    z: &[f64],
    fd_step: f64,
) -> Result<RankProbe> {
    if !(1e-8..=1e-3).contains(&fd_step) {
        return Err(Error::Domain(format!(
            "fd_step {fd_step} outside [1e-8, 1e-3]"
        )));
    }
    let (jac, kinks) = jacobian_with_kinks(map, z, fd_step)?;
    let sv = jac.clone().svd(false, false).singular_values;
    let max_sv = sv.iter().copied().fold(0.0, f64::max);
    let min_sv = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let abs_det = if jac.is_square() {
        jac.determinant().abs()
    } else {
        0.0
    };
    let rank_deficient = !jac.is_square() || min_sv <= 1e-9 * max_sv.max(f64::MIN_POSITIVE);
    Ok(RankProbe {
        min_singular_value: min_sv,
        max_singular_value: max_sv,
        abs_det,
        degenerate: rank_deficient || !kinks.is_empty(),
        kinks,
        analytic_det: map.analytic_det(z),
    })
}

/// Central difference of the map along `dir`.
pub fn directional_derivative(
    map: &dyn NonRedundantMap,
    z: &[f64],
    dir: &[f64],
    fd_step: f64,
) -> Result<Vec<f64>> {
    let plus: Vec<f64> = z.iter().zip(dir).map(|(a, d)| a + fd_step * d).collect();
    let minus: Vec<f64> = z.iter().zip(dir).map(|(a, d)| a - fd_step * d).collect();
    let fp = map.eval(&plus)?;
    let fm = map.eval(&minus)?;
    Ok(fp
        .iter()
        .zip(&fm)
        .map(|(a, b)| (a - b) / (2.0 * fd_step))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcVerdicts {
    pub nc1: Verdict,
    pub nc2: Verdict,
    pub nc3: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcReport {
    pub mapping_id: String,
    pub segments: usize,
    pub nc1_atom_estimates: Vec<AtomEstimate>,
    pub nc1_sampler: InputSampler,
    pub nc2_multiplicity: Multiplicity,
    pub nc2_base_points: u64,
    pub nc3_min_abs_det: f64,
    pub nc3_min_relative_singular_value: f64,
    pub nc3_degenerate_points: u64,
    pub nc3_points: u64,
    pub verdict: NcVerdicts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcCheckConfig {
    pub segments: usize,
    pub atom_samples: usize,
    pub sampler: InputSampler,
    pub preimage_bases: usize,
    pub preimage_probes: usize,
    pub jacobian_points: usize,
    pub fd_step: f64,
    pub seed: u64,
}

impl Default for NcCheckConfig {
    fn default() -> Self {
        Self {
            segments: 10,
            atom_samples: 1_000_000,
            sampler: InputSampler::Uniform,
            preimage_bases: 10,
            preimage_probes: 10_000,
            jacobian_points: 100,
            fd_step: 1e-6,
            seed: 0,
        }
    }
}

/// All three diagnostics for one mapping.
///
/// A condition fails on any observed atom, any second preimage, or any
/// degenerate Jacobian among the probes.
pub fn nc_check(mode: MapMode, cfg: &DpmpConfig, nc: &NcCheckConfig) -> Result<NcReport> {
    let k = nc.segments;
    if k == 0 {
        return Err(Error::Config("segments must be positive".into()));
    }
    let label = mode.name();
    let mut r1 = rng::derive(nc.seed, &format!("nc1/{label}"));
    let atoms = estimate_atom_mass(
        mode,
        cfg,
        k,
        nc.sampler,
        &CurveEvent::all(k),
        nc.atom_samples,
        &mut r1,
    )?;

    let mut r2 = rng::derive(nc.seed, &format!("nc2/{label}"));
    let mut mult = Multiplicity {
        distinct: 1,
        probes: 0,
    };
    for _ in 0..nc.preimage_bases {
        let base = InputSampler::Uniform.sample(k, &mut r2);
        let m = preimage_multiplicity(mode, cfg, &base, nc.preimage_probes, &mut r2)?;
        mult.probes += m.probes;
        mult.distinct = mult.distinct.max(m.distinct);
    }

    let mut r3 = rng::derive(nc.seed, &format!("nc3/{label}"));
    let mut min_det = f64::INFINITY;
    let mut min_rel_sv = f64::INFINITY;
    let mut degenerate = 0u64;
    for _ in 0..nc.jacobian_points {
        // Keep the probe away from the box faces so both difference sides stay inside.
        let mut base = InputSampler::Uniform.sample(k, &mut r3);
        for x in base.u_q.iter_mut().chain(base.u_p.iter_mut()) {
            *x = 0.01 + 0.98 * *x;
        }
        let chart = UnitChart {
            mode,
            cfg: cfg.clone(),
            base,
        };
        let probe = jacobian_rank_probe(&chart, &chart.point(), nc.fd_step)?;
        min_det = min_det.min(probe.abs_det);
        min_rel_sv = min_rel_sv
            .min(probe.min_singular_value / probe.max_singular_value.max(f64::MIN_POSITIVE));
        if probe.degenerate {
            degenerate += 1;
        }
    }

    let verdict = |fail: bool| if fail { Verdict::Fail } else { Verdict::Pass };
    Ok(NcReport {
        mapping_id: label.to_string(),
        segments: k,
        nc1_sampler: nc.sampler,
        verdict: NcVerdicts {
            nc1: verdict(atoms.iter().any(|a| a.hits > 0)),
            nc2: verdict(mult.distinct > 1),
            nc3: if nc.jacobian_points == 0 {
                Verdict::NotApplicable
            } else {
                verdict(degenerate > 0)
            },
        },
        nc1_atom_estimates: atoms,
        nc2_multiplicity: mult,
        nc2_base_points: nc.preimage_bases as u64,
        nc3_min_abs_det: min_det,
        nc3_min_relative_singular_value: min_rel_sv,
        nc3_degenerate_points: degenerate,
        nc3_points: nc.jacobian_points as u64,
    })
}
