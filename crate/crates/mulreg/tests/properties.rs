//! Property tests for the structural invariants, plus the Monte Carlo
//! calibration fixtures that the operation contracts promise.

use proptest::prelude::*;
use rand::Rng;

use mulreg::bayes::{bayes_estimate, minimax_estimate, IntegratorCfg, ParamSet};
use mulreg::experiments::{mc_risk, oracle_bandwidth, EstimatorSpec};
use mulreg::lepski::{adaptive_estimate, select, SelectionMode};
use mulreg::model::{simulate, test_function, DesignGrid, FunctionSpec, NoiseMode};
use mulreg::poly::{local_lse, plug_in_bounds, window, MultiIndexSet, PolyCoeffs, WindowData};
use mulreg::rng::{stream, tag};

fn fast_cfg() -> IntegratorCfg {
    IntegratorCfg {
        nodes_per_axis: 24,
        ..Default::default()
    }
}

/// Count |p| <= b multi-indices by direct enumeration over {0..b}^d.
fn brute_force_count(d: usize, b: usize) -> usize {
    let mut count = 0;
    let mut idx = vec![0usize; d];
    loop {
        if idx.iter().sum::<usize>() <= b {
            count += 1;
        }
        let mut axis = d;
        loop {
            if axis == 0 {
                return count;
            }
            axis -= 1;
            if idx[axis] < b {
                idx[axis] += 1;
                for v in idx.iter_mut().skip(axis + 1) {
                    *v = 0;
                }
                break;
            }
        }
    }
}

proptest! {
    #[test]
    fn multi_index_cardinality_matches_enumeration(d in 1usize..=5, b in 0usize..=5) {
        let set = MultiIndexSet::new(d, b);
        prop_assert_eq!(set.len(), brute_force_count(d, b));
    }

    #[test]
    fn grids_are_pure_and_in_domain(d in 1usize..=2, m in 2usize..=12) {
        let n = m.pow(d as u32);
        let a = DesignGrid::make(d, n).unwrap();
        let b = DesignGrid::make(d, n).unwrap();
        prop_assert_eq!(&a, &b);
        for p in a.iter_points() {
            prop_assert!(p.iter().all(|&c| c > 0.0 && c <= 1.0));
        }
    }

    #[test]
    fn simulated_observations_stay_below_frontier(seed in 0u64..1000, c in 0.1f64..10.0) {
        let f = FunctionSpec::constant(c);
        let grid = DesignGrid::make(1, 64).unwrap();
        let s = simulate(&f, &grid, seed);
        for (&y, x) in s.y_values.iter().zip(grid.iter_points()) {
            prop_assert!(y >= 0.0 && y <= f.eval(x));
        }
    }

    #[test]
    fn membership_bounds_polynomial_on_cube(
        seed in 0u64..10_000,
        a in 0.2f64..2.0,
        width in 0.3f64..4.0,
    ) {
        let idxset = MultiIndexSet::new(1, 2);
        let set = ParamSet::new(a, a + width, idxset.clone()).unwrap();
        let mut rng = stream(seed, &[tag::FIXTURE]);
        let hull = set.box_hull();
        // Draw anywhere in the hull and project: members are exactly the
        // fixed points, so this exercises arbitrary members of the set.
        let raw: Vec<f64> = hull.iter().map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect();
        let t = set.project(&raw);
        prop_assert!(set.violation(&t) <= 1e-9);
        let poly = PolyCoeffs::new(idxset, t);
        for i in 0..25 {
            let z = [-0.5 + i as f64 / 24.0];
            let v = poly.eval_scaled(&z);
            prop_assert!(v >= set.a_low - 1e-8 && v <= set.m_up + 1e-8);
        }
    }

    #[test]
    fn projection_is_feasible_and_idempotent(
        t0 in -5.0f64..10.0,
        t1 in -5.0f64..5.0,
        t2 in -5.0f64..5.0,
    ) {
        let idxset = MultiIndexSet::new(1, 2);
        let set = ParamSet::new(1.0, 4.0, idxset).unwrap();
        let p = set.project(&[t0, t1, t2]);
        prop_assert!(set.violation(&p) <= 1e-9);
        let q = set.project(&p);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn selection_is_monotone_under_threshold_scaling(
        values in prop::collection::vec(0.5f64..4.0, 3..7),
        s in prop::collection::vec(0.001f64..0.5, 3..7),
        rho in 1.0f64..50.0,
    ) {
        let k = values.len().min(s.len());
        let values = &values[..k];
        let s = &s[..k];
        let (k_base, _) = select(values, s, 1.0);
        let scaled: Vec<f64> = s.iter().map(|v| v * rho).collect();
        let (k_scaled, _) = select(values, &scaled, 1.0);
        prop_assert!(k_scaled <= k_base);
    }

    #[test]
    fn minimax_bandwidth_monotone(n in 100usize..100_000, beta in 0.5f64..4.0, l in 0.5f64..4.0) {
        let h = mulreg::minimax_bandwidth(beta, l, n, 1).unwrap();
        let h_larger_n = mulreg::minimax_bandwidth(beta, l, 2 * n, 1).unwrap();
        let h_larger_l = mulreg::minimax_bandwidth(beta, 2.0 * l, n, 1).unwrap();
        prop_assert!(h_larger_n < h);
        prop_assert!(h_larger_l < h);
    }
}

/// Posterior medians against the b = 0 closed form on randomized windows.
#[test]
fn b0_medians_match_closed_form() {
    let idxset = MultiIndexSet::new(1, 0);
    let mut rng = stream(42, &[tag::FIXTURE]);
    let cfg = IntegratorCfg {
        nodes_per_axis: 4096,
        ..Default::default()
    };
    for _ in 0..10 {
        let a = 0.5 + rng.random::<f64>();
        let m = a + 0.5 + 2.0 * rng.random::<f64>();
        let n_obs = 3 + (rng.random::<f64>() * 12.0) as usize;
        let ys: Vec<f64> = (0..n_obs).map(|_| rng.random::<f64>() * 0.8 * m).collect();
        let xs: Vec<f64> = (0..n_obs).map(|i| 0.45 + 0.1 * i as f64 / n_obs as f64).collect();
        let win = WindowData::from_parts(vec![0.5], 0.1, idxset.clone(), 100, xs, ys.clone());
        let set = ParamSet::new(a, m, idxset.clone()).unwrap();
        let lo = a.max(ys.iter().cloned().fold(0.0, f64::max));
        let e = 1.0 - n_obs as f64;
        let expect = ((lo.powf(e) + m.powf(e)) / 2.0).powf(1.0 / e);
        let est = bayes_estimate(&win, &set, &cfg).unwrap();
        assert!(
            (est.f_hat_y - expect).abs() / expect < 1e-3,
            "median {} vs {expect}",
            est.f_hat_y
        );
    }
}

/// Known-constants estimator on a constant truth: |f_hat - 2| < 0.2 in at
/// least 95% of 200 seeded replications (n = 400, A = 1, M = 3).
#[test]
fn minimax_constant_concentration() {
    let f = FunctionSpec::constant(2.0);
    let grid = DesignGrid::make(1, 400).unwrap();
    let cfg = fast_cfg();
    let mut hits = 0;
    for rep in 0..200u64 {
        let sample = simulate(&f, &grid, mulreg::rng::derive_u64(1001, &[rep]));
        let (est, _) = minimax_estimate(&sample, &[0.5], 2.0, 1.0, 1.0, 3.0, 2, &cfg).unwrap();
        if (est.f_hat_y - 2.0).abs() < 0.2 {
            hits += 1;
        }
    }
    assert!(hits >= 190, "only {hits}/200 within 0.2");
}

/// The data-driven pipeline on a constant truth: f_hat_star within
/// [1.7, 2.3] in at least 90% of 200 replications (n = 400, practical mode).
#[test]
fn adaptive_constant_concentration() {
    let f = FunctionSpec::constant(2.0);
    let grid = DesignGrid::make(1, 400).unwrap();
    let cfg = fast_cfg();
    let mut hits = 0;
    for rep in 0..200u64 {
        let sample = simulate(&f, &grid, mulreg::rng::derive_u64(1002, &[rep]));
        let (f_star, _) =
            adaptive_estimate(&sample, &[0.5], 2, 1.0, &cfg, SelectionMode::Practical, 2.0)
                .unwrap();
        if (1.7..=2.3).contains(&f_star) {
            hits += 1;
        }
    }
    assert!(hits >= 180, "only {hits}/200 within [1.7, 2.3]");
}

/// Plug-in bound behavior on a constant truth at n = 10^4. The level
/// estimate concentrates (its standard deviation is 0.08 here), while the
/// derivative-sum estimate cannot: the h^{-|p|} rescale amplifies the
/// second-derivative coefficient noise to a standard deviation of several
/// hundred, so only its lower bound and order of magnitude are stable.
#[test]
fn plug_in_bounds_on_constants() {
    let f = FunctionSpec::constant(2.0);
    let grid = DesignGrid::make(1, 10_000).unwrap();
    let idxset = MultiIndexSet::new(1, 2);
    let h_max = (10_000f64).powf(-1.0 / 3.0);
    let mut a_hits = 0;
    let mut m_hats = Vec::new();
    for rep in 0..100u64 {
        let sample = simulate(&f, &grid, mulreg::rng::derive_u64(1003, &[rep]));
        let win = window(&sample, &[0.5], h_max, &idxset).unwrap();
        let (_, delta) = local_lse(&win).unwrap();
        let (a_hat, m_hat) = plug_in_bounds(&delta).unwrap();
        if (a_hat - 2.0).abs() < 0.2 {
            a_hits += 1;
        }
        assert!(m_hat >= a_hat);
        m_hats.push(m_hat);
    }
    assert!(a_hits >= 95, "only {a_hits}/100 level estimates within 0.2");
    m_hats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_m = m_hats[50];
    assert!(
        (2.0..3000.0).contains(&median_m),
        "median derivative-sum estimate {median_m} outside its predicted band"
    );
}

/// The oracle bandwidth choice on the piecewise-linear function is stable
/// under doubling the replication count and never undercuts the linear
/// stretch (smaller windows only discard bias-free observations).
#[test]
fn oracle_choices_are_stable() {
    let f4 = test_function("f4").unwrap();
    let cfg = fast_cfg();
    let candidates = [0.5, 0.25, 0.125, 0.0625];
    for seed in [11u64, 12, 13] {
        let r1 = oracle_bandwidth(&f4, &[0.5], 1000, &candidates, 150, seed, &cfg, 2).unwrap();
        let r2 = oracle_bandwidth(&f4, &[0.5], 1000, &candidates, 300, seed, &cfg, 2).unwrap();
        assert_eq!(r1.h_tilde, r2.h_tilde, "seed {seed} unstable under doubling");
        assert!(r1.h_tilde >= 0.125, "h_tilde {}", r1.h_tilde);
    }
}

/// The estimated L1 criterion is convex along segments of the set, and the
/// returned estimates satisfy both set constraints (so the function estimate
/// lands between A and M).
#[test]
fn criterion_convex_and_estimates_feasible() {
    let idxset = MultiIndexSet::new(1, 1);
    let mut rng = stream(90, &[tag::FIXTURE]);
    let cfg = IntegratorCfg {
        nodes_per_axis: 32,
        ..Default::default()
    };
    let set = ParamSet::new(0.8, 4.0, idxset.clone()).unwrap();
    // One synthetic window, 50 random pairs through the same posterior.
    let n_obs = 8;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n_obs {
        let x = 0.4 + 0.2 * (i as f64 + 0.5) / n_obs as f64;
        xs.push(x);
        ys.push((2.0 + 0.6 * (x - 0.5) / 0.2) * rng.random::<f64>());
    }
    let win = WindowData::from_parts(vec![0.5], 0.2, idxset.clone(), 100, xs, ys);

    let est = bayes_estimate(&win, &set, &cfg).unwrap();
    assert!(set.violation(&est.theta_hat.values) <= 1e-9);
    assert!(est.f_hat_y >= set.a_low - 1e-9 && est.f_hat_y <= set.m_up + 1e-9);

    let hull = set.box_hull();
    let draw_member = |rng: &mut rand_chacha::ChaCha12Rng| -> Vec<f64> {
        let raw: Vec<f64> = hull
            .iter()
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect();
        set.project(&raw)
    };
    for _ in 0..50 {
        let t1 = draw_member(&mut rng);
        let t2 = draw_member(&mut rng);
        let mid: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| (a + b) / 2.0).collect();
        let f1 = mulreg::posterior_l1_criterion(&win, &set, &cfg, &t1).unwrap();
        let f2 = mulreg::posterior_l1_criterion(&win, &set, &cfg, &t2).unwrap();
        let fm = mulreg::posterior_l1_criterion(&win, &set, &cfg, &mid).unwrap();
        assert!(
            fm <= f1.max(f2) + 1e-10,
            "criterion not quasi-convex: {fm} vs max({f1}, {f2})"
        );
        assert!(fm <= (f1 + f2) / 2.0 + 1e-10, "criterion not convex");
    }
}

/// Risk reports are reproducible bit for bit and the standard error obeys
/// sample_std / sqrt(reps).
#[test]
fn risk_reports_reproduce() {
    let f = test_function("f1").unwrap();
    let spec = EstimatorSpec::Adaptive {
        b: 2,
        q: 1.0,
        mode: SelectionMode::Practical,
        c_thr: 2.0,
    };
    let a = mc_risk(&spec, &f, &[0.5], 100, 16, 77, &fast_cfg(), NoiseMode::Uniform).unwrap();
    let b = mc_risk(&spec, &f, &[0.5], 100, 16, 77, &fast_cfg(), NoiseMode::Uniform).unwrap();
    assert_eq!(a.risk.to_bits(), b.risk.to_bits());
    assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    assert!(a.std_error > 0.0);
}

/// Tail probabilities start near 1 below the deviation floor.
#[test]
fn tail_curve_saturates_below_floor() {
    let f = FunctionSpec::constant(2.0);
    let eps: Vec<f64> = vec![0.25, 1.0, 4.0, 8.0, 12.0, 16.0, 20.0];
    let curve = mulreg::tail_decay_check(&f, 400, 0.25, &eps, &[0.5], 400, 31, &fast_cfg(), 2)
        .unwrap();
    assert!(curve.prob[0] > 0.9, "P at eps=0.25 is {}", curve.prob[0]);
    assert!(curve.prob.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}
