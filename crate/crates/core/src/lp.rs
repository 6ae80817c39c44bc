//! Dense bounded-variable primal simplex with dual extraction.
//!
//! Problem form:
//!
//! ```text
//! min cᵀx  s.t.  A_eq x = b_eq,  A_in x ≤ b_in,  l ≤ x ≤ u
//! ```
//!
//! Bounds may be infinite. Duals follow the Lagrangian
//! `cᵀx − λᵀ(A_eq x − b_eq) + μᵀ(A_in x − b_in) − zᵀx` with `μ ≥ 0`, so `λ_i`
//! is `∂obj/∂b_eq_i`, `−μ_i` is `∂obj/∂b_in_i`, and `z_j` (the reduced cost) is
//! nonnegative at an active lower bound and nonpositive at an active upper.
//!
//! Inequalities get slack columns; rows whose starting residual has the wrong
//! sign for the slack get a phase-one artificial. Pricing is Dantzig's rule,
//! falling back to Bland's rule after a run of degenerate pivots. The final
//! basis is refactored with LU so reported values do not carry tableau drift.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pivot elements smaller than this are never used.
const PIVOT_TOL: f64 = 1e-9;
/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_RUN: usize = 50;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub eq_matrix: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub ineq_matrix: Vec<Vec<f64>>,
    pub ineq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LpProblem {
    /// `n` variables in `[0, ∞)` with zero cost and no rows.
    pub fn new(n: usize) -> Self {
        Self {
            objective: vec![0.0; n],
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            ..Default::default()
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) -> usize {
        self.eq_matrix.push(row);
        self.eq_rhs.push(rhs);
        self.eq_rhs.len() - 1
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) -> usize {
        self.ineq_matrix.push(row);
        self.ineq_rhs.push(rhs);
        self.ineq_rhs.len() - 1
    }

    pub fn check(&self) -> Result<()> {
        let n = self.n_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Structural(
                "bound vectors must match the objective length".into(),
            ));
        }
        if self.eq_matrix.len() != self.eq_rhs.len()
            || self.ineq_matrix.len() != self.ineq_rhs.len()
        {
            return Err(Error::Structural("row count and rhs length differ".into()));
        }
        if self
            .eq_matrix
            .iter()
            .chain(&self.ineq_matrix)
            .any(|r| r.len() != n)
        {
            return Err(Error::Structural(
                "constraint row length differs from variable count".into(),
            ));
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(Error::Domain(format!("variable {j} has bounds [{l}, {u}]")));
            }
        }
        let finite = self
            .objective
            .iter()
            .chain(&self.eq_rhs)
            .chain(&self.ineq_rhs)
            .all(|v| v.is_finite())
            && self
                .eq_matrix
                .iter()
                .chain(&self.ineq_matrix)
                .flatten()
                .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain(
                "objective, matrices and right-hand sides must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Plain-text dump for triage: bounds and costs per variable, then rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "vars {} eq {} ineq {}",
            self.n_vars(),
            self.eq_rhs.len(),
            self.ineq_rhs.len()
        );
        for j in 0..self.n_vars() {
            let _ = writeln!(
                s,
                "x{j}\tc={}\t[{}, {}]",
                self.objective[j], self.lower[j], self.upper[j]
            );
        }
        let rows = |s: &mut String, tag: &str, m: &[Vec<f64>], b: &[f64], op: &str| {
            for (i, (row, rhs)) in m.iter().zip(b).enumerate() {
                let terms: Vec<String> = row
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| **a != 0.0)
                    .map(|(j, a)| format!("{a}*x{j}"))
                    .collect();
                let _ = writeln!(s, "{tag}{i}\t{} {op} {rhs}", terms.join(" + "));
            }
        };
        rows(&mut s, "eq", &self.eq_matrix, &self.eq_rhs, "=");
        rows(&mut s, "in", &self.ineq_matrix, &self.ineq_rhs, "<=");
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// `λ`, one per equality row.
    pub eq_duals: Vec<f64>,
    /// `μ ≥ 0`, one per inequality row.
    pub ineq_duals: Vec<f64>,
    /// Reduced costs `z = c − A_eqᵀλ + A_inᵀμ`.
    pub bound_duals: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    fn empty(status: LpStatus, n: usize, iterations: usize) -> Self {
        Self {
            status,
            x: vec![f64::NAN; n],
            objective: f64::NAN,
            eq_duals: Vec::new(),
            ineq_duals: Vec::new(),
            bound_duals: Vec::new(),
            iterations,
        }
    }
}

/// Working state. Columns: structural, then slacks, then artificials.
struct Simplex {
    m: usize,
    ncols: usize,
    /// Original constraint matrix over all columns, row-major.
    a: Vec<f64>,
    b: Vec<f64>,
    /// `B⁻¹A`, row-major `m × ncols`.
    t: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    tol: f64,
    iterations: usize,
    max_iterations: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl Simplex {
    fn col(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.m).map(move |i| self.t[i * self.ncols + j])
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (i, &bj) in self.basis.iter().enumerate() {
            let cb = cost[bj];
            if cb != 0.0 {
                let row = &self.t[i * self.ncols..(i + 1) * self.ncols];
                for (dj, tij) in d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        d
    }

    /// Direction in which nonbasic `j` improves the objective, if any.
    fn improving(&self, j: usize, dj: f64) -> Option<f64> {
        if self.is_basic[j] || self.lo[j] == self.hi[j] {
            return None;
        }
        let at_lo = self.x[j] <= self.lo[j];
        let at_hi = self.x[j] >= self.hi[j];
        if dj < -self.tol && !at_hi {
            Some(1.0)
        } else if dj > self.tol && !at_lo {
            Some(-1.0)
        } else {
            None
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let nc = self.ncols;
        let p = self.t[r * nc + q];
        for v in &mut self.t[r * nc..(r + 1) * nc] {
            *v /= p;
        }
        let (before, rest) = self.t.split_at_mut(r * nc);
        let (prow, after) = rest.split_at_mut(nc);
        for row in before
            .chunks_exact_mut(nc)
            .chain(after.chunks_exact_mut(nc))
        {
            let f = row[q];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * pv;
                }
                row[q] = 0.0;
            }
        }
        self.is_basic[self.basis[r]] = false;
        self.basis[r] = q;
        self.is_basic[q] = true;
    }

    fn run(&mut self, cost: &[f64]) -> Result<Outcome> {
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= self.max_iterations {
                return Err(Error::Internal(format!(
                    "simplex iteration limit {} reached",
                    self.max_iterations
                )));
            }
            let d = self.reduced_costs(cost);
            let bland = degenerate >= DEGENERATE_RUN;
            let mut enter: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..self.ncols {
                if let Some(dir) = self.improving(j, d[j]) {
                    if bland {
                        enter = Some((j, dir));
                        break;
                    }
                    if d[j].abs() > best {
                        best = d[j].abs();
                        enter = Some((j, dir));
                    }
                }
            }
            let Some((q, dir)) = enter else {
                return Ok(Outcome::Optimal);
            };
            self.iterations += 1;

            // Ratio test: x_B moves by −dir·θ·α.
            let mut theta = self.hi[q] - self.lo[q];
            let mut leave: Option<(usize, f64)> = None;
            let mut leave_alpha = 0.0;
            let col: Vec<f64> = self.col(q).collect();
            for (i, &alpha) in col.iter().enumerate() {
                let rate = dir * alpha;
                if rate.abs() <= PIVOT_TOL {
                    continue;
                }
                let bv = self.basis[i];
                let (limit, bound) = if rate > 0.0 {
                    ((self.x[bv] - self.lo[bv]) / rate, self.lo[bv])
                } else {
                    ((self.hi[bv] - self.x[bv]) / -rate, self.hi[bv])
                };
                if !limit.is_finite() {
                    continue;
                }
                let limit = limit.max(0.0);
                let better = match leave {
                    None => limit < theta,
                    Some((r, _)) => {
                        if limit < theta - 1e-12 {
                            true
                        } else if limit <= theta + 1e-12 {
                            if bland {
                                bv < self.basis[r]
                            } else {
                                alpha.abs() > leave_alpha
                            }
                        } else {
                            false
                        }
                    }
                };
                if better || (leave.is_none() && limit <= theta) {
                    theta = limit;
                    leave = Some((i, bound));
                    leave_alpha = alpha.abs();
                }
            }
            if !theta.is_finite() {
                return Ok(Outcome::Unbounded);
            }
            degenerate = if theta <= 1e-12 { degenerate + 1 } else { 0 };
            let step = dir * theta;
            self.x[q] += step;
            for (i, &alpha) in col.iter().enumerate() {
                let bv = self.basis[i];
                self.x[bv] -= step * alpha;
            }
            match leave {
                None => {
                    // Bound flip of the entering variable.
                    self.x[q] = if dir > 0.0 { self.hi[q] } else { self.lo[q] };
                }
                Some((r, bound)) => {
                    let out = self.basis[r];
                    self.pivot(r, q);
                    self.x[out] = bound;
                }
            }
        }
    }

    fn basis_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |i, k| {
            self.a[i * self.ncols + self.basis[k]]
        })
    }

    /// Recomputes `B⁻¹A` and the basic values from the original data.
    fn refactor(&mut self) -> Result<()> {
        let lu = self.basis_matrix().lu();
        let a = DMatrix::from_row_slice(self.m, self.ncols, &self.a);
        let t = lu
            .solve(&a)
            .ok_or_else(|| Error::Internal("singular basis during refactorization".into()))?;
        for i in 0..self.m {
            for j in 0..self.ncols {
                self.t[i * self.ncols + j] = t[(i, j)];
            }
        }
        let mut rhs = DVector::from_column_slice(&self.b);
        for j in (0..self.ncols).filter(|&j| !self.is_basic[j]) {
            if self.x[j] != 0.0 {
                for i in 0..self.m {
                    rhs[i] -= self.a[i * self.ncols + j] * self.x[j];
                }
            }
        }
        let xb = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Internal("singular basis during refactorization".into()))?;
        for (k, &bj) in self.basis.iter().enumerate() {
            self.x[bj] = xb[k];
        }
        Ok(())
    }

    fn duals(&self, cost: &[f64]) -> Result<Vec<f64>> {
        let cb = DVector::from_iterator(self.m, self.basis.iter().map(|&j| cost[j]));
        self.basis_matrix()
            .transpose()
            .lu()
            .solve(&cb)
            .map(|v| v.iter().copied().collect())
            .ok_or_else(|| Error::Internal("singular basis while extracting duals".into()))
    }
}

/// Solves the LP. `tol` is the feasibility and optimality tolerance.
pub fn solve(problem: &LpProblem, tol: f64) -> Result<LpSolution> {
    problem.check()?;
    let n = problem.n_vars();
    let m_eq = problem.eq_rhs.len();
    let m_in = problem.ineq_rhs.len();
    let m = m_eq + m_in;

    // Nonbasic structural start: a finite bound, else 0.
    let start: Vec<f64> = (0..n)
        .map(|j| {
            let (l, u) = (problem.lower[j], problem.upper[j]);
            if l.is_finite() {
                l
            } else if u.is_finite() {
                u
            } else {
                0.0
            }
        })
        .collect();
    let rows: Vec<&Vec<f64>> = problem
        .eq_matrix
        .iter()
        .chain(&problem.ineq_matrix)
        .collect();
    let b: Vec<f64> = problem
        .eq_rhs
        .iter()
        .chain(&problem.ineq_rhs)
        .copied()
        .collect();
    let residual: Vec<f64> = rows
        .iter()
        .zip(&b)
        .map(|(r, bi)| bi - r.iter().zip(&start).map(|(a, x)| a * x).sum::<f64>())
        .collect();
    let needs_art: Vec<bool> = (0..m).map(|i| i < m_eq || residual[i] < 0.0).collect();
    let n_art = needs_art.iter().filter(|&&v| v).count();
    let ncols = n + m_in + n_art;

    let mut a = vec![0.0; m * ncols];
    let mut lo = start.iter().map(|_| 0.0).collect::<Vec<_>>();
    let mut hi = lo.clone();
    lo[..n].copy_from_slice(&problem.lower);
    hi[..n].copy_from_slice(&problem.upper);
    lo.resize(ncols, 0.0);
    hi.resize(ncols, f64::INFINITY);
    let mut x = start.clone();
    x.resize(ncols, 0.0);
    let mut basis = vec![0; m];
    let mut is_basic = vec![false; ncols];
    let mut art = n + m_in;
    let mut scale = vec![1.0; m];
    for i in 0..m {
        a[i * ncols..i * ncols + n].copy_from_slice(rows[i]);
        if i >= m_eq {
            a[i * ncols + n + (i - m_eq)] = 1.0;
        }
        if needs_art[i] {
            let sign = if residual[i] >= 0.0 { 1.0 } else { -1.0 };
            a[i * ncols + art] = sign;
            scale[i] = sign;
            basis[i] = art;
            x[art] = residual[i].abs();
            art += 1;
        } else {
            basis[i] = n + (i - m_eq);
            x[n + (i - m_eq)] = residual[i];
        }
        is_basic[basis[i]] = true;
    }
    let t: Vec<f64> = a
        .chunks_exact(ncols.max(1))
        .zip(&scale)
        .flat_map(|(r, s)| r.iter().map(move |v| v * s))
        .collect();
    let mut sx = Simplex {
        m,
        ncols,
        t: if m == 0 { Vec::new() } else { t },
        a,
        b: b.clone(),
        lo,
        hi,
        x,
        basis,
        is_basic,
        tol,
        iterations: 0,
        max_iterations: 50 * (m + ncols) + 1000,
    };

    let b_scale = 1.0 + b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if n_art > 0 {
        let mut phase1 = vec![0.0; ncols];
        phase1[n + m_in..].iter_mut().for_each(|c| *c = 1.0);
        sx.run(&phase1)?;
        let infeas: f64 = sx.x[n + m_in..].iter().sum();
        if infeas > tol * b_scale {
            return Ok(LpSolution::empty(LpStatus::Infeasible, n, sx.iterations));
        }
        for j in n + m_in..ncols {
            sx.lo[j] = 0.0;
            sx.hi[j] = 0.0;
            if !sx.is_basic[j] {
                sx.x[j] = 0.0;
            }
        }
    }
    let mut cost = problem.objective.clone();
    cost.resize(ncols, 0.0);
    // Optimize, then refactor and re-check; a few rounds absorb tableau drift.
    for _ in 0..4 {
        if let Outcome::Unbounded = sx.run(&cost)? {
            return Ok(LpSolution::empty(LpStatus::Unbounded, n, sx.iterations));
        }
        if m == 0 {
            break;
        }
        sx.refactor()?;
        let d = sx.reduced_costs(&cost);
        if (0..ncols).all(|j| sx.improving(j, d[j]).is_none()) {
            break;
        }
    }
    let y = if m == 0 { Vec::new() } else { sx.duals(&cost)? };
    let xs: Vec<f64> = sx.x[..n].to_vec();
    let eq_duals = y[..m_eq].to_vec();
    let ineq_duals: Vec<f64> = y[m_eq..].iter().map(|v| -v).collect();
    let bound_duals: Vec<f64> = (0..n)
        .map(|j| {
            let mut z = problem.objective[j];
            for (i, row) in rows.iter().enumerate() {
                z -= y[i] * row[j];
            }
            z
        })
        .collect();
    let objective = problem.objective.iter().zip(&xs).map(|(c, x)| c * x).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x: xs,
        objective,
        eq_duals,
        ineq_duals,
        bound_duals,
        iterations: sx.iterations,
    })
}

/// Residuals of the optimality conditions, each an absolute maximum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_ineq: f64,
    pub bounds: f64,
    /// Most negative `μ_i`, or wrong-signed reduced cost at a non-active bound.
    pub dual_sign: f64,
    pub complementarity: f64,
    pub duality_gap: f64,
    pub violations: Vec<String>,
}

impl KktReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_residual(&self) -> f64 {
        [
            self.stationarity,
            self.primal_eq,
            self.primal_ineq,
            self.bounds,
            self.dual_sign,
            self.complementarity,
            self.duality_gap,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Recomputes every residual from the problem data and the reported solution.
///
/// The duality gap is relative, `|primal − dual| / (1 + |primal|)`; the others
/// are absolute.
pub fn verify_kkt(problem: &LpProblem, sol: &LpSolution, tol: f64) -> KktReport {
    let n = problem.n_vars();
    let x = &sol.x;
    let dot = |r: &[f64]| r.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    let mut rep = KktReport {
        stationarity: 0.0,
        primal_eq: 0.0,
        primal_ineq: 0.0,
        bounds: 0.0,
        dual_sign: 0.0,
        complementarity: 0.0,
        duality_gap: 0.0,
        violations: Vec::new(),
    };
    if sol.status != LpStatus::Optimal
        || x.len() != n
        || sol.eq_duals.len() != problem.eq_rhs.len()
        || sol.ineq_duals.len() != problem.ineq_rhs.len()
        || sol.bound_duals.len() != n
    {
        rep.violations
            .push("solution is not an optimal certificate of matching shape".into());
        return rep;
    }
    for (row, b) in problem.eq_matrix.iter().zip(&problem.eq_rhs) {
        rep.primal_eq = rep.primal_eq.max((dot(row) - b).abs());
    }
    let slacks: Vec<f64> = problem
        .ineq_matrix
        .iter()
        .zip(&problem.ineq_rhs)
        .map(|(row, b)| b - dot(row))
        .collect();
    for (&s, &mu) in slacks.iter().zip(&sol.ineq_duals) {
        rep.primal_ineq = rep.primal_ineq.max(-s);
        rep.dual_sign = rep.dual_sign.max(-mu);
        rep.complementarity = rep.complementarity.max((mu * s).abs());
    }
    let mut dual_obj = 0.0;
    for j in 0..n {
        let (l, u, xj, z) = (problem.lower[j], problem.upper[j], x[j], sol.bound_duals[j]);
        rep.bounds = rep.bounds.max(l - xj).max(xj - u);
        let mut g = problem.objective[j] - z;
        for (row, lam) in problem.eq_matrix.iter().zip(&sol.eq_duals) {
            g -= row[j] * lam;
        }
        for (row, mu) in problem.ineq_matrix.iter().zip(&sol.ineq_duals) {
            g += row[j] * mu;
        }
        rep.stationarity = rep.stationarity.max(g.abs());
        // z > 0 needs a finite lower bound, z < 0 a finite upper bound.
        if z > 0.0 {
            if l.is_finite() {
                rep.complementarity = rep.complementarity.max((z * (xj - l)).abs());
                dual_obj += z * l;
            } else {
                rep.dual_sign = rep.dual_sign.max(z);
            }
        } else if z < 0.0 {
            if u.is_finite() {
                rep.complementarity = rep.complementarity.max((z * (u - xj)).abs());
                dual_obj += z * u;
            } else {
                rep.dual_sign = rep.dual_sign.max(-z);
            }
        }
    }
    dual_obj += problem
        .eq_rhs
        .iter()
        .zip(&sol.eq_duals)
        .map(|(b, l)| b * l)
        .sum::<f64>();
    dual_obj -= problem
        .ineq_rhs
        .iter()
        .zip(&sol.ineq_duals)
        .map(|(b, m)| b * m)
        .sum::<f64>();
    let primal: f64 = problem.objective.iter().zip(x).map(|(c, v)| c * v).sum();
    rep.duality_gap = (primal - dual_obj).abs() / (1.0 + primal.abs());
    let checks = [
        ("stationarity", rep.stationarity),
        ("primal equality", rep.primal_eq),
        ("primal inequality", rep.primal_ineq),
        ("bounds", rep.bounds),
        ("dual sign", rep.dual_sign),
        ("complementarity", rep.complementarity),
        ("duality gap", rep.duality_gap),
    ];
    for (name, v) in checks {
        if !(v <= tol) {
            rep.violations
                .push(format!("{name} residual {v:.3e} exceeds {tol:.1e}"));
        }
    }
    rep
}
