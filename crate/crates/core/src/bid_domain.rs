//! Feasible stepwise bids.
//!
//! A K-segment bid is a vector of breakpoints `Q_0 = 0 ≤ Q_1 ≤ … ≤ Q_K = q_max`
//! and segment prices `p_min ≤ p_1 ≤ … ≤ p_K ≤ p_max`. The closed set allows
//! plateaus and zero-width segments; the interior set requires every inequality
//! to be strict.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default feasibility tolerance, in MW for breakpoints and currency for prices.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepBidCurve {
    pub breakpoints: Vec<f64>,
    pub prices: Vec<f64>,
    pub q_max: f64,
    pub p_min: f64,
    pub p_max: f64,
}

/// Which inequality of the feasible set is violated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// `Q_0 = 0`.
    FirstBreakpoint,
    /// `Q_K = q_max`.
    LastBreakpoint,
    /// `Q_{i-1} ≤ Q_i`.
    BreakpointOrder,
    /// `p_min ≤ p_1`.
    PriceLower,
    /// `p_K ≤ p_max`.
    PriceUpper,
    /// `p_{i-1} ≤ p_i`.
    PriceOrder,
    /// A non-finite entry.
    NonFinite,
}

/// One failed inequality. `index` is 1-based for prices (`p_1..p_K`) and
/// 0-based for breakpoints (`Q_0..Q_K`); `magnitude` is the amount by which
/// the inequality fails.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub index: usize,
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub is_closed_feasible: bool,
    pub is_interior_feasible: bool,
    pub violations: Vec<Violation>,
}

impl StepBidCurve {
    pub fn new(
        breakpoints: Vec<f64>,
        prices: Vec<f64>,
        q_max: f64,
        p_min: f64,
        p_max: f64,
    ) -> Result<Self> {
        let curve = Self {
            breakpoints,
            prices,
            q_max,
            p_min,
            p_max,
        };
        curve.check_shape()?;
        Ok(curve)
    }

    /// Single segment `[0, q_max]` at one price.
    pub fn flat(q_max: f64, price: f64, p_min: f64, p_max: f64) -> Self {
        Self {
            breakpoints: vec![0.0, q_max],
            prices: vec![price],
            q_max,
            p_min,
            p_max,
        }
    }

    pub fn segments(&self) -> usize {
        self.prices.len()
    }

    /// Width of segment `i` (0-based), `Q_{i+1} - Q_i`.
    pub fn width(&self, i: usize) -> f64 {
        self.breakpoints[i + 1] - self.breakpoints[i]
    }

    fn check_shape(&self) -> Result<()> {
        let k = self.prices.len();
        if k == 0 {
            return Err(Error::Structural("a bid needs at least one segment".into()));
        }
        if self.breakpoints.len() != k + 1 {
            return Err(Error::Structural(format!(
                "{} prices need {} breakpoints, got {}",
                k,
                k + 1,
                self.breakpoints.len()
            )));
        }
        if !(self.q_max > 0.0) {
            return Err(Error::Domain(format!(
                "q_max must be positive, got {}",
                self.q_max
            )));
        }
        if !(self.p_max > self.p_min) {
            return Err(Error::Domain(format!(
                "price bounds must satisfy p_min < p_max, got [{}, {}]",
                self.p_min, self.p_max
            )));
        }
        Ok(())
    }

    /// Price at output `q`: `p_i` for `q ∈ (Q_{i-1}, Q_i]`, and `p_1` at `q = 0`.
    pub fn evaluate(&self, q: f64) -> Result<f64> {
        if !(0.0..=self.q_max).contains(&q) {
            return Err(Error::Domain(format!(
                "q = {q} outside [0, {}]",
                self.q_max
            )));
        }
        if q == 0.0 {
            return Ok(self.prices[0]);
        }
        // First segment whose right breakpoint is at or beyond q.
        let idx = self.breakpoints[1..].partition_point(|&b| b < q);
        Ok(self.prices[idx.min(self.prices.len() - 1)])
    }

    /// One CSV row: `q_max,p_min,p_max,Q_0;…;Q_K,p_1;…;p_K`.
    pub fn to_csv_row(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(";")
        };
        format!(
            "{},{},{},{},{}",
            self.q_max,
            self.p_min,
            self.p_max,
            join(&self.breakpoints),
            join(&self.prices)
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let fields: Vec<&str> = row.trim().split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Structural(format!(
                "expected 5 fields, got {}",
                fields.len()
            )));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Structural(format!("{s:?}: {e}")))
        };
        let list = |s: &str| s.split(';').map(num).collect::<Result<Vec<f64>>>();
        Self::new(
            list(fields[3])?,
            list(fields[4])?,
            num(fields[0])?,
            num(fields[1])?,
            num(fields[2])?,
        )
    }
}

/// Checks every inequality of the closed and interior feasible sets.
///
/// Closed feasibility allows each inequality to fail by at most `tol`; interior
/// feasibility additionally needs every ordered pair to be separated by more
/// than `tol`.
pub fn validate(curve: &StepBidCurve, tol: f64) -> Result<FeasibilityReport> {
    curve.check_shape()?;
    if !(tol >= 0.0) {
        return Err(Error::Domain(format!(
            "tolerance must be nonnegative, got {tol}"
        )));
    }
    let mut violations = Vec::new();
    let mut strict = true;
    let mut push = |constraint, index, magnitude: f64| {
        violations.push(Violation {
            constraint,
            index,
            magnitude,
        });
    };

    let finite = curve
        .breakpoints
        .iter()
        .chain(&curve.prices)
        .all(|x| x.is_finite())
        && curve.q_max.is_finite()
        && curve.p_min.is_finite()
        && curve.p_max.is_finite();
    if !finite {
        push(Constraint::NonFinite, 0, f64::INFINITY);
        return Ok(FeasibilityReport {
            is_closed_feasible: false,
            is_interior_feasible: false,
            violations,
        });
    }

    let q = &curve.breakpoints;
    let k = curve.prices.len();
    if q[0].abs() > tol {
        push(Constraint::FirstBreakpoint, 0, q[0].abs());
    }
    if (q[k] - curve.q_max).abs() > tol {
        push(Constraint::LastBreakpoint, k, (q[k] - curve.q_max).abs());
    }
    for i in 1..=k {
        let gap = q[i] - q[i - 1];
        if gap < -tol {
            push(Constraint::BreakpointOrder, i, -gap);
        }
        strict &= gap > tol;
    }

    let p = &curve.prices;
    let low = p[0] - curve.p_min;
    if low < -tol {
        push(Constraint::PriceLower, 1, -low);
    }
    strict &= low > tol;
    let high = curve.p_max - p[k - 1];
    if high < -tol {
        push(Constraint::PriceUpper, k, -high);
    }
    strict &= high > tol;
    for i in 1..k {
        let gap = p[i] - p[i - 1];
        if gap < -tol {
            push(Constraint::PriceOrder, i + 1, -gap);
        }
        strict &= gap > tol;
    }

    let closed = violations.is_empty();
    Ok(FeasibilityReport {
        is_closed_feasible: closed,
        is_interior_feasible: closed && strict,
        violations,
    })
}
