use bidlab_core::learn::episode_seed;
use bidlab_core::market_network::{
    build_shift_factors, commit, train_agents, Branch, Generator, Load, NetworkConfig,
    NetworkMarket, ScedInput,
};
use bidlab_core::{Algorithm, DispatchResult, Error, LearnerConfig, NetworkCase, StepBidCurve};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn toy(
    buses: usize,
    branches: &[(usize, usize, f64, f64)],
    penalty: f64,
    gens: &[(usize, f64)],
    loads: &[(usize, f64)],
) -> NetworkCase {
    NetworkCase {
        name: "toy".into(),
        buses,
        slack_bus: 1,
        price_cap: 150.0,
        branches: branches
            .iter()
            .map(|&(from, to, reactance, f_max)| Branch {
                from,
                to,
                reactance,
                f_max,
                penalty,
            })
            .collect(),
        generators: gens
            .iter()
            .enumerate()
            .map(|(i, &(bus, capacity))| Generator {
                name: format!("T{}", i + 1),
                bus,
                a: 5.0,
                b: 10.0,
                capacity,
                ramp: capacity,
                startup_cost: 0.0,
                fixed_cost: 0.0,
            })
            .collect(),
        loads: loads
            .iter()
            .map(|&(bus, base_mw)| Load { bus, base_mw })
            .collect(),
    }
}

fn toy_market(case: NetworkCase) -> NetworkMarket {
    let n = case.generators.len();
    NetworkMarket::new(
        case,
        NetworkConfig {
            periods: 4,
            gammas: Some(vec![1.0; n]),
            ..NetworkConfig::default()
        },
        0,
    )
    .unwrap()
}

fn flat_bids(market: &NetworkMarket, prices: &[f64]) -> Vec<StepBidCurve> {
    market
        .case
        .generators
        .iter()
        .zip(prices)
        .map(|(g, &p)| StepBidCurve::flat(g.capacity, p, 0.0, 150.0))
        .collect()
}

fn dispatch(market: &NetworkMarket, bids: &[StepBidCurve], loads: &[f64]) -> DispatchResult {
    let on = vec![true; bids.len()];
    market
        .sced(&ScedInput {
            bids,
            loads,
            commitment: &on,
            startups: &on,
            prev: None,
        })
        .unwrap()
}

/// Ten equal segments priced at the marginal cost of each segment's midpoint.
fn truthful_bids(market: &NetworkMarket) -> Vec<StepBidCurve> {
    market
        .case
        .generators
        .iter()
        .zip(&market.costs)
        .map(|(g, c)| {
            let w = g.capacity / 10.0;
            let breakpoints = (0..=10).map(|i| i as f64 * w).collect();
            let prices = (0..10)
                .map(|i| c.marginal((i as f64 + 0.5) * w).min(150.0))
                .collect();
            StepBidCurve::new(breakpoints, prices, g.capacity, 0.0, 150.0).unwrap()
        })
        .collect()
}

fn ieee39(config: NetworkConfig) -> NetworkMarket {
    NetworkMarket::new(NetworkCase::ieee39(), config, 7).unwrap()
}

fn peak_loads(m: &NetworkMarket) -> Vec<f64> {
    let peak = m.config.periods / 2;
    let scale = m.mean_total_load(peak) / m.case.loads.iter().map(|l| l.base_mw).sum::<f64>();
    m.case.base_loads().iter().map(|d| d * scale).collect()
}

#[test]
fn two_bus_shift_factor_is_one() {
    let case = toy(
        2,
        &[(2, 1, 0.1, 100.0)],
        1000.0,
        &[(1, 100.0)],
        &[(2, 50.0)],
    );
    let sf = build_shift_factors(&case).unwrap();
    assert_eq!(sf.sf[(0, 0)], 0.0);
    assert!((sf.sf[(0, 1)] - 1.0).abs() < 1e-12);
}

#[test]
fn triangle_splits_two_thirds_one_third() {
    // Equal reactances; injection at bus 2 returns to slack bus 1.
    let case = toy(
        3,
        &[(2, 1, 0.1, 100.0), (2, 3, 0.1, 100.0), (3, 1, 0.1, 100.0)],
        1000.0,
        &[(1, 100.0)],
        &[(3, 10.0)],
    );
    let sf = build_shift_factors(&case).unwrap();
    let col: Vec<f64> = (0..3).map(|l| sf.sf[(l, 1)]).collect();
    for (got, want) in col.iter().zip([2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]) {
        assert!((got - want).abs() < 1e-12, "{col:?}");
    }
    assert!((0..3).all(|l| sf.sf[(l, 0)] == 0.0));
}

#[test]
fn shift_factors_match_an_angle_solve() {
    let case = NetworkCase::ieee39();
    let sf = build_shift_factors(&case).unwrap();
    let n = case.buses;
    let s = case.slack_bus - 1;
    let mut b = DMatrix::<f64>::zeros(n, n);
    for br in &case.branches {
        let (f, t, y) = (br.from - 1, br.to - 1, 1.0 / br.reactance);
        b[(f, f)] += y;
        b[(t, t)] += y;
        b[(f, t)] -= y;
        b[(t, f)] -= y;
    }
    // Ground the slack angle by replacing its row with θ_s = 0.
    for j in 0..n {
        b[(s, j)] = if j == s { 1.0 } else { 0.0 };
    }
    let mut r = bidlab_core::rng::seeded(3);
    for _ in 0..20 {
        let mut inj: Vec<f64> = (0..n).map(|_| r.random_range(-300.0..300.0)).collect();
        let total: f64 = inj.iter().sum();
        inj[s] -= total;
        let mut rhs = DVector::from_vec(inj.clone());
        rhs[s] = 0.0;
        let theta = b.clone().lu().solve(&rhs).unwrap();
        let direct: Vec<f64> = case
            .branches
            .iter()
            .map(|br| (theta[br.from - 1] - theta[br.to - 1]) / br.reactance)
            .collect();
        for (a, d) in sf.flows(&inj).iter().zip(&direct) {
            assert!((a - d).abs() < 1e-9 * (1.0 + d.abs()), "{a} vs {d}");
        }
    }
}

#[test]
fn disconnected_or_bad_cases_are_rejected() {
    let case = toy(3, &[(2, 1, 0.1, 100.0)], 1000.0, &[(1, 100.0)], &[]);
    assert!(matches!(build_shift_factors(&case), Err(Error::Case(_))));
    let err = NetworkCase::from_json("{\n  \"name\": \"x\",\n  \"buses\": oops\n}").unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
    let round = NetworkCase::from_json(&NetworkCase::ieee39().to_json()).unwrap();
    assert_eq!(round, NetworkCase::ieee39());
}

#[test]
fn commitment_examples() {
    let case = NetworkCase::ieee39();
    let c = commit(&case, &[1000.0, 5900.0, 3000.0], 1.1).unwrap();
    assert!(c.u.iter().all(|row| row.iter().all(|&on| on)));
    assert!(c.y[0].iter().all(|&y| y) && c.y[1..].iter().all(|row| row.iter().all(|&y| !y)));
    let c = commit(&case, &[900.0; 5], 1.1).unwrap();
    let on: Vec<&str> = case
        .generators
        .iter()
        .zip(&c.u[0])
        .filter(|(_, &u)| u)
        .map(|(g, _)| g.name.as_str())
        .collect();
    assert_eq!(on, ["G10"]);
    assert!(c.y[1..].iter().all(|row| row.iter().all(|&y| !y)));
    assert!(matches!(commit(&case, &[8000.0], 1.1), Err(Error::Case(_))));
}

#[test]
fn three_bus_congestion_matches_hand_kkt() {
    // Slack 1. Line 1–3 limited to 150; a $10 unit at bus 1, a $30 unit at bus 2, 300 MW at bus 3.
    // Flow on 1→3 is (2/3)·300 − (1/3)·g2, so g2 ≥ 150. The limit's dual μ solves
    // LMP_2 = 10 + μ/3 = 30, hence μ = 60 and LMP_3 = 10 + (2/3)·60 = 50.
    let case = toy(
        3,
        &[(1, 2, 0.1, 1e4), (2, 3, 0.1, 1e4), (1, 3, 0.1, 150.0)],
        1000.0,
        &[(1, 500.0), (2, 500.0)],
        &[(3, 300.0)],
    );
    let m = toy_market(case);
    let r = dispatch(&m, &flat_bids(&m, &[10.0, 30.0]), &[0.0, 0.0, 300.0]);
    assert!(
        (r.g[0] - 150.0).abs() < 1e-9 && (r.g[1] - 150.0).abs() < 1e-9,
        "{:?}",
        r.g
    );
    for (got, want) in r.lmp.iter().zip([10.0, 30.0, 50.0]) {
        assert!((got - want).abs() < 1e-9, "{:?}", r.lmp);
    }
    assert!((r.mu_plus[2] - 60.0).abs() < 1e-9 && r.mu_minus[2].abs() < 1e-12);
    assert!((r.flows[2] - 150.0).abs() < 1e-9);
    assert_eq!(r.total_slack(), 0.0);
    // Load payments minus generator revenue: 50·300 − (10·150 + 30·150) = 9000 = 150·60.
    assert!((r.congestion_rent() - 9000.0).abs() < 1e-6);
}

#[test]
fn slack_prices_follow_the_penalty() {
    let build = |penalty| {
        let case = toy(
            2,
            &[(1, 2, 0.1, 100.0)],
            penalty,
            &[(1, 500.0), (2, 500.0)],
            &[(2, 200.0)],
        );
        let m = toy_market(case);
        dispatch(&m, &flat_bids(&m, &[10.0, 80.0]), &[0.0, 200.0])
    };
    // Overloading costs 10 + 50 < 80, so the slack carries 100 MW and bus 2 prices at 60.
    let cheap = build(50.0);
    assert!(
        (cheap.s_plus[0] - 100.0).abs() < 1e-9 && (cheap.lmp[1] - 60.0).abs() < 1e-9,
        "{cheap:?}"
    );
    let dear = build(1000.0);
    assert_eq!(dear.total_slack(), 0.0);
    assert!((dear.g[1] - 100.0).abs() < 1e-9 && (dear.lmp[1] - 80.0).abs() < 1e-9);
}

#[test]
fn huge_limits_give_one_price_set_by_merit_order() {
    let m = NetworkMarket::new(
        NetworkCase::ieee39().with_uniform_limits(1e6),
        NetworkConfig::default(),
        7,
    )
    .unwrap();
    let bids = truthful_bids(&m);
    let loads = peak_loads(&m);
    let r = dispatch(&m, &bids, &loads);
    let spread = r.lmp.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        - r.lmp.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    assert!(spread < 1e-6 && (r.lmp[0] - r.lambda_e).abs() < 1e-6);
    // Independent merit order over every segment of every bid.
    let mut segs: Vec<(f64, f64)> = bids
        .iter()
        .flat_map(|b| (0..b.segments()).map(move |i| (b.prices[i], b.width(i))))
        .collect();
    segs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut left: f64 = loads.iter().sum();
    let mut marginal = 0.0;
    for (p, w) in segs {
        if left <= 0.0 {
            break;
        }
        marginal = p;
        left -= w;
    }
    assert!(
        (r.lambda_e - marginal).abs() < 1e-6,
        "{} vs {marginal}",
        r.lambda_e
    );
    assert!((r.g.iter().sum::<f64>() - loads.iter().sum::<f64>()).abs() < 1e-6);
}

#[test]
fn peak_congestion_keeps_the_price_identities() {
    let m = ieee39(NetworkConfig::default());
    let loads = peak_loads(&m);
    let r = dispatch(&m, &truthful_bids(&m), &loads);
    assert_eq!(r.total_slack(), 0.0);
    assert!(
        r.mu_plus.iter().chain(&r.mu_minus).any(|&mu| mu > 1e-6),
        "peak should congest a line"
    );
    for (b, lmp) in r.lmp.iter().enumerate() {
        assert_eq!(*lmp, r.lambda_e + r.lambda_c[b]);
        let direct = r.lambda_e
            - (0..m.case.branches.len())
                .map(|l| m.sf.sf[(l, b)] * (r.mu_plus[l] - r.mu_minus[l]))
                .sum::<f64>();
        assert!((lmp - direct).abs() < 1e-9);
    }
    let mut net = loads.iter().zip(&r.lmp).map(|(d, p)| d * p).sum::<f64>();
    for (g, gi) in m.case.generators.iter().zip(&r.g) {
        net -= r.lmp[g.bus - 1] * gi;
    }
    assert!(
        (net - r.congestion_rent()).abs() < 1e-6 * (1.0 + net.abs()),
        "{net} vs {}",
        r.congestion_rent()
    );
    for ((g, gi), (c, pi)) in m
        .case
        .generators
        .iter()
        .zip(&r.g)
        .zip(m.costs.iter().zip(&r.profit))
    {
        assert!((r.lmp[g.bus - 1] * gi - c.total(*gi) - pi).abs() < 1e-9);
    }
}

fn run_truthful(m: &NetworkMarket, seed: u64) -> Vec<DispatchResult> {
    let bids = truthful_bids(m);
    let mut ep = m.start(seed).unwrap();
    let mut out = Vec::new();
    while !ep.done() {
        out.push(ep.step_bids(&bids).unwrap());
    }
    out
}

#[test]
fn ramp_rows_at_capacity_change_nothing() {
    let config = NetworkConfig {
        periods: 24,
        ..NetworkConfig::default()
    };
    // Ramps a hair under capacity force the rows into the LP.
    let mut case = NetworkCase::ieee39();
    case.generators
        .iter_mut()
        .for_each(|g| g.ramp = g.capacity * (1.0 - 1e-9));
    let with = run_truthful(
        &NetworkMarket::new(case.clone(), config.clone(), 7).unwrap(),
        5,
    );
    let without = run_truthful(
        &NetworkMarket::new(
            case,
            NetworkConfig {
                enforce_ramp: false,
                ..config.clone()
            },
            7,
        )
        .unwrap(),
        5,
    );
    for (a, b) in with.iter().zip(&without) {
        for (x, y) in a.g.iter().zip(&b.g) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }
    // A binding ramp is respected.
    let mut tight = NetworkCase::ieee39();
    tight
        .generators
        .iter_mut()
        .for_each(|g| g.ramp = 0.2 * g.capacity);
    let m = NetworkMarket::new(tight, config, 7).unwrap();
    let rs = run_truthful(&m, 5);
    for w in rs.windows(2) {
        for ((g0, g1), gen) in w[0].g.iter().zip(&w[1].g).zip(&m.case.generators) {
            assert!((g1 - g0).abs() <= gen.ramp + 1e-6);
        }
    }
}

#[test]
fn episodes_balance_and_repeat() {
    let m = ieee39(NetworkConfig {
        periods: 24,
        ..NetworkConfig::default()
    });
    let a = run_truthful(&m, 11);
    assert_eq!(a, run_truthful(&m, 11));
    let loads = m.sample_loads(11);
    for (r, d) in a.iter().zip(&loads) {
        assert!((r.g.iter().sum::<f64>() - d.iter().sum::<f64>()).abs() < 1e-6);
    }
    assert_ne!(loads, m.sample_loads(12));
}

#[test]
fn load_profile_peaks_at_the_calibrated_level() {
    let m = ieee39(NetworkConfig::default());
    let peak = (0..96).map(|t| m.mean_total_load(t)).fold(0.0, f64::max);
    assert!((peak - 0.8 * m.case.total_capacity()).abs() < 1e-6);
    assert!((m.mean_total_load(48) - peak).abs() < 1e-9);
}

#[test]
fn simultaneous_training_is_reproducible() {
    let m = ieee39(NetworkConfig {
        periods: 4,
        ..NetworkConfig::default()
    });
    let cfg = LearnerConfig {
        episodes: 2,
        hidden: vec![8],
        ..LearnerConfig::for_algorithm(Algorithm::Ppo)
    };
    let a = train_agents(&m, &cfg, &mut |_, _| {}).unwrap();
    let b = train_agents(&m, &cfg, &mut |_, _| {}).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.params, b.params);
    let seeds = [episode_seed(1, 1), episode_seed(1, 2)];
    assert_eq!(
        m.evaluate_profile(&a.params, &seeds).unwrap(),
        m.evaluate_profile(&b.params, &seeds).unwrap()
    );
}
