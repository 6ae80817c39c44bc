use bidlab_core::bid_domain::validate;
use bidlab_core::nc_verify::{numerical_jacobian, DpmpChart};
use bidlab_core::param_maps::{
    dpmp_forward, dpmp_from_coords, dpmp_inverse, dpmp_jacobian_det, h_mode, project_monotone_box,
    sort_map,
};
use bidlab_core::{
    DpmpConfig, DualPositiveAction, MapMode, NonRedundantCoords, StepBidCurve, UnitBoxAction,
};
use proptest::prelude::*;

fn cfg() -> DpmpConfig {
    DpmpConfig {
        k_scale: 0.05,
        alpha: 1.0,
        q_max: 1000.0,
        p_min: 0.0,
        p_max: 1000.0,
    }
}

fn unit_box(k: usize) -> impl Strategy<Value = UnitBoxAction> {
    (
        prop::collection::vec(1e-6..1.0 - 1e-6, k),
        prop::collection::vec(1e-6..1.0 - 1e-6, k),
    )
        .prop_map(|(u_q, u_p)| UnitBoxAction { u_q, u_p })
}

fn sized_unit_box() -> impl Strategy<Value = UnitBoxAction> {
    (1usize..=10).prop_flat_map(unit_box)
}

/// Exact projection onto `{lo ≤ p_1 ≤ … ≤ p_K ≤ hi}` by trying every split
/// into contiguous blocks, setting each block to its clipped mean, and
/// keeping the best monotone candidate. The optimum has this form.
fn projection_by_blocks(x: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let k = x.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (k - 1)) {
        let mut out = Vec::with_capacity(k);
        let mut start = 0;
        for i in 0..k {
            let cut = i == k - 1 || mask & (1 << i) != 0;
            if cut {
                let m = (x[start..=i].iter().sum::<f64>() / (i + 1 - start) as f64).clamp(lo, hi);
                out.extend(std::iter::repeat_n(m, i + 1 - start));
                start = i + 1;
            }
        }
        if out.windows(2).all(|w| w[0] <= w[1]) {
            let d: f64 = out.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, out));
            }
        }
    }
    best.unwrap().1
}

/// Smallest squared distance from `x` to monotone vectors on a grid.
fn grid_minimum(x: &[f64], step: f64, hi: f64) -> f64 {
    let levels: Vec<f64> = (0..=(hi / step).round() as usize)
        .map(|i| i as f64 * step)
        .collect();
    fn walk(x: &[f64], levels: &[f64], from: usize, acc: f64, best: &mut f64) {
        if x.is_empty() {
            *best = best.min(acc);
            return;
        }
        for (j, &l) in levels.iter().enumerate().skip(from) {
            walk(&x[1..], levels, j, acc + (l - x[0]).powi(2), best);
        }
    }
    let mut best = f64::INFINITY;
    walk(x, &levels, 0, 0.0, &mut best);
    best
}

#[test]
fn forward_example_matches_scalar_formulas() {
    let c = DpmpConfig {
        k_scale: 1.0,
        alpha: 1.0,
        q_max: 100.0,
        p_min: 0.0,
        p_max: 100.0,
    };
    let a = DualPositiveAction {
        r: vec![1.0, 1.0],
        w: vec![2f64.ln(), 2f64.ln()],
    };
    let curve = dpmp_forward(&a, &c).unwrap();
    // λ = 1/2 each; s = (ln 2, 2 ln 2); p = 100(1 − e^{−s}).
    assert_eq!(curve.breakpoints, vec![0.0, 50.0, 100.0]);
    assert!((curve.prices[0] - 50.0).abs() < 1e-12);
    assert!((curve.prices[1] - 75.0).abs() < 1e-12);
}

#[test]
fn determinant_example_against_finite_differences() {
    let c = DpmpConfig {
        k_scale: 1.0,
        alpha: 1.0,
        q_max: 100.0,
        p_min: 0.0,
        p_max: 100.0,
    };
    let chart = DpmpChart {
        cfg: c.clone(),
        k: 2,
    };
    let z = [0.5, 2f64.ln(), 2f64.ln()];
    let numeric = numerical_jacobian(&chart, &z, 1e-6)
        .unwrap()
        .determinant()
        .abs();
    assert!((numeric - 125_000.0).abs() / 125_000.0 < 1e-4, "{numeric}");
    let coords = NonRedundantCoords {
        lambda_bar: vec![0.5],
        w: vec![2f64.ln(), 2f64.ln()],
    };
    assert!((dpmp_jacobian_det(&coords, &c) - 125_000.0).abs() < 1e-6);
}

#[test]
fn pav_matches_grid_search_on_small_instances() {
    // Inputs on a 0.25 grid in [−0.5, 3.5]; box [0, 3]. The exact projection is
    // feasible for the grid problem's constraint set, so its distance can only
    // be at or below the grid minimum.
    let vals: Vec<f64> = (0..=16).map(|i| -0.5 + 0.25 * i as f64).collect();
    for a in (0..vals.len()).step_by(3) {
        for b in (0..vals.len()).step_by(2) {
            for c in (0..vals.len()).step_by(3) {
                let x = [vals[a], vals[b], vals[c]];
                let p = project_monotone_box(&x, 0.0, 3.0);
                let d: f64 = p.iter().zip(&x).map(|(u, v)| (u - v).powi(2)).sum();
                assert!(d <= grid_minimum(&x, 0.25, 3.0) + 1e-12, "{x:?} -> {p:?}");
            }
        }
    }
}

#[test]
fn sort_has_full_permutation_invariance_for_k4() {
    let base = [0.9, 0.2, 0.6, 0.4];
    let reference = sort_map(
        &UnitBoxAction {
            u_q: vec![0.5; 4],
            u_p: base.to_vec(),
        },
        100.0,
        100.0,
    );
    let mut count = 0;
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                for l in 0..4 {
                    let idx = [i, j, k, l];
                    if (0..4).all(|v| idx.contains(&v)) {
                        let u_p = idx.iter().map(|&v| base[v]).collect();
                        let c = sort_map(
                            &UnitBoxAction {
                                u_q: vec![0.5; 4],
                                u_p,
                            },
                            100.0,
                            100.0,
                        );
                        assert_eq!(c, reference);
                        count += 1;
                    }
                }
            }
        }
    }
    assert_eq!(count, 24);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn dpmp_round_trip_is_identity(u in sized_unit_box()) {
        let c = cfg();
        let curve = h_mode(&u, MapMode::Dpmp, &c).unwrap();
        let back = dpmp_from_coords(&dpmp_inverse(&curve, &c).unwrap(), &c).unwrap();
        for (a, b) in curve.breakpoints.iter().zip(&back.breakpoints).chain(curve.prices.iter().zip(&back.prices)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dpmp_output_is_strictly_interior(u in sized_unit_box()) {
        let curve = h_mode(&u, MapMode::Dpmp, &cfg()).unwrap();
        let r = validate(&curve, 0.0).unwrap();
        prop_assert!(r.is_interior_feasible, "{:?}", r.violations);
        prop_assert!(curve.prices[0] > curve.p_min);
        prop_assert!(*curve.prices.last().unwrap() < curve.p_max);
    }

    #[test]
    fn every_mode_is_closed_feasible(u in sized_unit_box()) {
        for mode in MapMode::ALL {
            let curve = h_mode(&u, mode, &cfg()).unwrap();
            prop_assert!(validate(&curve, 1e-9).unwrap().is_closed_feasible, "{mode}");
        }
    }

    #[test]
    fn width_scale_does_not_matter(r in prop::collection::vec(0.01..10.0f64, 1..8), scale in 0.01..100.0f64, w0 in 0.01..1.0f64) {
        let c = cfg();
        let w = vec![w0; r.len()];
        let a = dpmp_forward(&DualPositiveAction { r: r.clone(), w: w.clone() }, &c).unwrap();
        let b = dpmp_forward(&DualPositiveAction { r: r.iter().map(|x| x * scale).collect(), w }, &c).unwrap();
        for (x, y) in a.breakpoints.iter().zip(&b.breakpoints) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert_eq!(a.prices, b.prices);
    }

    #[test]
    fn analytic_determinant_matches_finite_differences(
        k in 2usize..=10,
        seed_l in prop::collection::vec(0.2..1.0f64, 10),
        seed_w in prop::collection::vec(0.02..0.4f64, 10),
    ) {
        let c = cfg();
        let total: f64 = seed_l[..k].iter().sum();
        let lambda_bar: Vec<f64> = seed_l[..k - 1].iter().map(|x| x / total).collect();
        let w = seed_w[..k].to_vec();
        let z: Vec<f64> = lambda_bar.iter().chain(&w).copied().collect();
        let chart = DpmpChart { cfg: c.clone(), k };
        let numeric = numerical_jacobian(&chart, &z, 1e-6).unwrap().determinant().abs();
        let analytic = dpmp_jacobian_det(&NonRedundantCoords { lambda_bar, w }, &c);
        prop_assert!((numeric - analytic).abs() / analytic < 1e-4, "k={} {} vs {}", k, numeric, analytic);
    }

    #[test]
    fn sort_ignores_price_order(u in unit_box(6), rot in 0usize..6) {
        let mut v = u.clone();
        v.u_p.rotate_left(rot);
        v.u_p.swap(0, 5);
        prop_assert_eq!(sort_map(&u, 100.0, 100.0), sort_map(&v, 100.0, 100.0));
    }

    #[test]
    fn pav_is_the_exact_projection(x in prop::collection::vec(-2.0..12.0f64, 1..=6)) {
        let got = project_monotone_box(&x, 0.0, 10.0);
        let want = projection_by_blocks(&x, 0.0, 10.0);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-9, "{:?}: {:?} vs {:?}", x, got, want);
        }
    }

    #[test]
    fn evaluate_is_nondecreasing(u in sized_unit_box(), mut qs in prop::collection::vec(0.0..=1000.0f64, 2..40)) {
        for mode in MapMode::ALL {
            let curve: StepBidCurve = h_mode(&u, mode, &cfg()).unwrap();
            qs.sort_by(f64::total_cmp);
            let prices: Vec<f64> = qs.iter().map(|&q| curve.evaluate(q).unwrap()).collect();
            prop_assert!(prices.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
