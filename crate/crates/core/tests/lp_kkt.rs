use bidlab_core::lp::{solve, verify_kkt, LpProblem, LpStatus};
use proptest::prelude::*;

/// A dispatch-shaped LP: one balance row, paired flow-limit rows with
/// penalized slack columns, and bounded segment columns.
fn sced_like(
    prices: &[f64],
    widths: &[f64],
    sens: &[Vec<f64>],
    limits: &[f64],
    demand: f64,
) -> LpProblem {
    let n_seg = prices.len();
    let n_line = limits.len();
    let n = n_seg + 2 * n_line;
    let mut p = LpProblem::new(n);
    p.objective[..n_seg].copy_from_slice(prices);
    p.upper[..n_seg].copy_from_slice(widths);
    for l in 0..2 * n_line {
        p.objective[n_seg + l] = 500.0;
    }
    let mut bal = vec![0.0; n];
    bal[..n_seg].iter_mut().for_each(|v| *v = 1.0);
    p.add_eq(bal, demand);
    for (l, s) in sens.iter().enumerate() {
        let mut up = vec![0.0; n];
        up[..n_seg].copy_from_slice(s);
        let mut down: Vec<f64> = up.iter().map(|v| -v).collect();
        up[n_seg + l] = -1.0;
        down[n_seg + n_line + l] = -1.0;
        p.add_le(up, limits[l]);
        p.add_le(down, limits[l]);
    }
    p
}

/// Dual objective recomputed from scratch: bᵀλ − b_inᵀμ + Σ z_j·(active bound).
fn dual_objective(p: &LpProblem, lam: &[f64], mu: &[f64], x: &[f64]) -> f64 {
    let mut d: f64 = p.eq_rhs.iter().zip(lam).map(|(b, l)| b * l).sum();
    d -= p.ineq_rhs.iter().zip(mu).map(|(b, m)| b * m).sum::<f64>();
    for j in 0..p.n_vars() {
        let mut z = p.objective[j];
        for (row, l) in p.eq_matrix.iter().zip(lam) {
            z -= row[j] * l;
        }
        for (row, m) in p.ineq_matrix.iter().zip(mu) {
            z += row[j] * m;
        }
        // Bound duals pair with whichever bound the variable sits on.
        let bound = if (x[j] - p.lower[j]).abs() <= (p.upper[j] - x[j]).abs() {
            p.lower[j]
        } else {
            p.upper[j]
        };
        if bound.is_finite() {
            d += z * bound;
        }
    }
    d
}

#[test]
fn worked_examples_certify() {
    let mut p = LpProblem::new(1);
    p.objective = vec![-1.0];
    p.upper = vec![10.0];
    p.add_le(vec![1.0], 1.0);
    let s = solve(&p, 1e-9).unwrap();
    assert_eq!(s.status, LpStatus::Optimal);
    assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.ineq_duals[0] - 1.0).abs() < 1e-12);
    assert!(verify_kkt(&p, &s, 1e-8).ok());

    let mut p = LpProblem::new(2);
    p.objective = vec![10.0, 20.0];
    p.upper = vec![100.0, 100.0];
    p.add_eq(vec![1.0, 1.0], 150.0);
    let s = solve(&p, 1e-9).unwrap();
    assert!((s.x[0] - 100.0).abs() < 1e-9 && (s.eq_duals[0] - 20.0).abs() < 1e-9);
    let r = verify_kkt(&p, &s, 1e-8);
    assert!(r.ok() && r.max_residual() <= 1e-8, "{r:?}");

    p.eq_rhs = vec![250.0];
    assert_eq!(solve(&p, 1e-9).unwrap().status, LpStatus::Infeasible);
}

#[test]
fn trivial_problem_sits_at_bounds() {
    let mut p = LpProblem::new(3);
    p.lower = vec![-1.0, 0.0, 2.0];
    p.upper = vec![1.0, 5.0, 2.0];
    let s = solve(&p, 1e-9).unwrap();
    assert_eq!(s.status, LpStatus::Optimal);
    assert!(verify_kkt(&p, &s, 1e-9).ok());
    assert!(s
        .x
        .iter()
        .zip(p.lower.iter().zip(&p.upper))
        .all(|(x, (l, u))| l <= x && x <= u));
}

#[test]
fn perturbed_duals_are_caught() {
    let mut p = LpProblem::new(2);
    p.objective = vec![10.0, 20.0];
    p.upper = vec![100.0, 100.0];
    p.add_eq(vec![1.0, 1.0], 150.0);
    let mut s = solve(&p, 1e-9).unwrap();
    s.eq_duals[0] += 1.0;
    let r = verify_kkt(&p, &s, 1e-8);
    assert!(!r.ok() && !r.violations.is_empty());
}

#[test]
fn debug_dump_lists_every_row() {
    let p = sced_like(&[1.0, 2.0], &[5.0, 5.0], &[vec![0.5, -0.5]], &[3.0], 4.0);
    let text = p.to_text();
    assert!(text.lines().count() >= 1 + p.eq_rhs.len() + p.ineq_rhs.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dispatch_shaped_lps_satisfy_kkt(
        n_seg in 4usize..30,
        n_line in 0usize..8,
        seed in prop::collection::vec(0.0..1.0f64, 400),
        fill in 0.05..0.95f64,
    ) {
        let mut it = seed.iter().cycle().copied();
        let prices: Vec<f64> = (0..n_seg).map(|_| 5.0 + 100.0 * it.next().unwrap()).collect();
        let widths: Vec<f64> = (0..n_seg).map(|_| 10.0 + 90.0 * it.next().unwrap()).collect();
        let sens: Vec<Vec<f64>> = (0..n_line).map(|_| (0..n_seg).map(|_| 2.0 * it.next().unwrap() - 1.0).collect()).collect();
        let limits: Vec<f64> = (0..n_line).map(|_| 20.0 + 200.0 * it.next().unwrap()).collect();
        let demand = fill * widths.iter().sum::<f64>();
        let p = sced_like(&prices, &widths, &sens, &limits, demand);
        let s = solve(&p, 1e-9).unwrap();
        prop_assert_eq!(s.status, LpStatus::Optimal);
        let r = verify_kkt(&p, &s, 1e-6);
        prop_assert!(r.ok(), "{:?}", r);
        let dual = dual_objective(&p, &s.eq_duals, &s.ineq_duals, &s.x);
        prop_assert!((dual - s.objective).abs() <= 1e-6 * (1.0 + s.objective.abs()), "{} vs {}", dual, s.objective);
        prop_assert!(s.ineq_duals.iter().all(|&m| m >= -1e-9));
    }

    #[test]
    fn balance_dual_is_the_marginal_offer(
        offers in prop::collection::vec((1.0..100.0f64, 5.0..50.0f64), 2..25),
        fill in 0.02..0.98f64,
    ) {
        let prices: Vec<f64> = offers.iter().map(|o| o.0).collect();
        let widths: Vec<f64> = offers.iter().map(|o| o.1).collect();
        let demand = fill * widths.iter().sum::<f64>();
        // Merit order: walk offers by price until demand is met.
        let mut order: Vec<usize> = (0..prices.len()).collect();
        order.sort_by(|&a, &b| prices[a].total_cmp(&prices[b]));
        let (mut left, mut marginal) = (demand, 0.0);
        for &i in &order {
            if left <= 0.0 {
                break;
            }
            marginal = prices[i];
            left -= widths[i];
        }
        // Skip instances where demand lands on an offer boundary; the dual is then any value in a gap.
        prop_assume!(left.abs() > 1e-6);
        let p = sced_like(&prices, &widths, &[], &[], demand);
        let s = solve(&p, 1e-9).unwrap();
        prop_assert!((s.eq_duals[0] - marginal).abs() < 1e-7, "{} vs {}", s.eq_duals[0], marginal);
    }
}
