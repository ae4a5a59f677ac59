//! Fixed-point solver properties, checked against the brute-force oracle.

use mars_core::fixedpoint::{solve, update_budget, FixedPointError, SolverConfig};
use mars_core::oracle::{constrained_baselines, grid_search, run_oracle, GridSpec};
use mars_core::{corpus, Evaluator, MisProblem, VarianceModel, WeightMode};

fn unaware(p: &MisProblem) -> Evaluator<'_> {
    Evaluator::new(p, WeightMode::BudgetUnaware, VarianceModel::Simplified)
}

fn zero_mean_unit_variance(c_delta: f64, v_delta: f64) -> MisProblem {
    // ∫ 2 sin²(2πx) = 1 and ∫ sin(2πx) = 0 on [0, 1].
    MisProblem::from_json(&format!(
        r#"{{"domain": [0, 1], "subintegrands": ["sqrt(2) * sin(2 * pi * x)"],
            "techniques": [{{"kind": "uniform"}}], "indicator": [[true]], "costs": [1],
            "overhead_cost": {c_delta}, "overhead_variance": {v_delta}}}"#
    ))
    .unwrap()
}

#[test]
fn single_technique_closed_form() {
    let p = zero_mean_unit_variance(1.0, 1.0);
    let eval = unaware(&p);
    let s = eval.moments(&[1.0]).unwrap();
    assert!(s[0].first_moment.abs() < 1e-12);
    assert!((s[0].variance - 1.0).abs() < 1e-10);

    let (summary, grid) = run_oracle(&eval, &GridSpec::default()).unwrap();
    let axis = GridSpec::default().axis();
    let nearest = axis
        .iter()
        .copied()
        .min_by(|a, b| (a.ln().abs()).total_cmp(&b.ln().abs()))
        .unwrap();
    assert_eq!(grid.argmin, vec![nearest]);
    assert!((summary.min - 4.0).abs() < 1e-9);
    assert!((summary.argmin[0] - 1.0).abs() < 1e-4);

    // β ← √β from β = 4.
    let sol = solve(&eval, &[4.0], &SolverConfig::default()).unwrap();
    let expected = [4.0, 2.0, 2f64.sqrt(), 2f64.powf(0.25)];
    for (point, e) in sol.trajectory.iter().zip(expected) {
        assert!((point.beta[0] - e).abs() < 1e-9, "{:?}", point.beta);
    }
    assert!(sol.converged);
    assert!((sol.beta()[0] - 1.0).abs() < 1e-5);
}

#[test]
fn zero_overhead_single_technique_is_scale_invariant() {
    // (V/β)(βC) = VC up to rounding. For a zero-mean technique this holds for every β; with a
    // nonzero mean roulette adds E²(1/β − 1), so only splitting budgets are invariant.
    let p = zero_mean_unit_variance(0.0, 0.0);
    let eval = unaware(&p);
    let reference = eval.inverse_efficiency(&[1.0]).unwrap();
    for b in [0.05, 0.3, 1.0, 1.5, 2.0, 7.25, 20.0] {
        let v = eval.inverse_efficiency(&[b]).unwrap();
        assert!(
            (v - reference).abs() <= 1e-12 * reference,
            "β = {b}: {v} vs {reference}"
        );
    }
    let q = corpus::load("single_technique")
        .unwrap()
        .unwrap()
        .with_costs(vec![2.5], 0.0, 0.0)
        .unwrap();
    let eval = unaware(&q);
    let reference = eval.inverse_efficiency(&[1.0]).unwrap();
    for b in [1.0, 1.5, 2.0, 7.25, 20.0] {
        let v = eval.inverse_efficiency(&[b]).unwrap();
        assert!(
            (v - reference).abs() <= 4.0 * f64::EPSILON * reference,
            "β = {b}: {v} vs {reference}"
        );
    }
}

#[test]
fn symmetric_init_stays_symmetric() {
    let p = corpus::load("symmetric").unwrap().unwrap();
    for mode in [WeightMode::BudgetUnaware, WeightMode::BudgetAware] {
        let eval = Evaluator::new(&p, mode, VarianceModel::Simplified);
        for b in [0.1, 1.0, 10.0] {
            let sol = solve(&eval, &[b, b], &SolverConfig::default()).unwrap();
            for point in &sol.trajectory {
                assert!(
                    (point.beta[0] - point.beta[1]).abs() <= 1e-12 * point.beta[0],
                    "{mode:?} {:?}",
                    point.beta
                );
            }
        }
    }
}

#[test]
fn all_initializations_reach_the_same_budgets() {
    let p = corpus::load(corpus::ASYMMETRIC).unwrap().unwrap();
    let eval = unaware(&p);
    let grid = GridSpec::default();
    let oracle = grid_search(&eval, &grid).unwrap();
    let mut finals = Vec::new();
    for a in [0.1, 1.0, 10.0] {
        for b in [0.1, 1.0, 10.0] {
            let sol = solve(&eval, &[a, b], &SolverConfig::default()).unwrap();
            finals.push(sol.trajectory[20.min(sol.trajectory.len() - 1)].beta.clone());
        }
    }
    for f in &finals {
        for t in 0..2 {
            assert!(
                (f[t] - finals[0][t]).abs() <= 1e-3 * finals[0][t],
                "{f:?} vs {:?}",
                finals[0]
            );
        }
    }
    // Within one grid cell of the grid minimum.
    let cell = (grid.hi / grid.lo).ln() / (grid.resolution - 1) as f64;
    for t in 0..2 {
        assert!(
            (finals[0][t].ln() - oracle.argmin[t].ln()).abs() <= cell,
            "{:?} vs {:?}",
            finals[0],
            oracle.argmin
        );
    }
}

#[test]
fn returned_budgets_are_fixed_points() {
    for p in corpus::all().unwrap() {
        let eval = unaware(&p);
        let config = SolverConfig::default();
        let sol = solve(&eval, &vec![1.0; p.n_techniques()], &config).unwrap();
        let e = eval.evaluate(sol.beta()).unwrap();
        let (lo, hi) = config.clamp.unwrap();
        for (t, s) in e.stats.iter().enumerate() {
            let b = sol.beta()[t];
            let next = update_budget(s, e.variance, e.cost).unwrap();
            if b == lo {
                assert!(
                    next <= lo * (1.0 + 1e-6),
                    "{} t={t}: clamped low but update says {next}",
                    p.name()
                );
            } else if b == hi {
                assert!(next >= hi * (1.0 - 1e-6), "{} t={t}", p.name());
            } else {
                assert!((next - b).abs() <= 1e-5 * b, "{} t={t}: {b} -> {next}", p.name());
            }
        }
    }
}

#[test]
fn solver_matches_oracle_and_improves_monotonically() {
    for p in corpus::all().unwrap() {
        let eval = unaware(&p);
        let grid = GridSpec {
            resolution: if p.n_techniques() == 3 { 40 } else { 128 },
            ..Default::default()
        };
        let (summary, _) = run_oracle(&eval, &grid).unwrap();
        let sol = solve(&eval, &vec![1.0; p.n_techniques()], &SolverConfig::default()).unwrap();
        assert!(sol.last().inv_efficiency <= 1.01 * summary.grid_min, "{}", p.name());
        assert!(
            sol.last().inv_efficiency <= summary.min * (1.0 + 1e-6),
            "{}: {} vs {}",
            p.name(),
            sol.last().inv_efficiency,
            summary.min
        );
        for w in sol.trajectory[1..].windows(2) {
            assert!(
                w[1].inv_efficiency <= w[0].inv_efficiency * (1.0 + 1e-12),
                "{} at iteration {}",
                p.name(),
                w[1].iteration
            );
        }
    }
}

#[test]
fn shared_mode_is_identical_for_one_technique() {
    let p = corpus::load("single_technique").unwrap().unwrap();
    for mode in [WeightMode::BudgetUnaware, WeightMode::BudgetAware] {
        let eval = Evaluator::new(&p, mode, VarianceModel::Simplified);
        for init in [0.07, 1.0, 13.0] {
            let own = solve(&eval, &[init], &SolverConfig::default()).unwrap();
            let shared = solve(
                &eval,
                &[init],
                &SolverConfig {
                    shared_budget: true,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(own, shared);
        }
    }
}

#[test]
fn shared_mode_moves_along_the_diagonal() {
    let p = corpus::load(corpus::ASYMMETRIC).unwrap().unwrap();
    let eval = unaware(&p);
    let config = SolverConfig {
        shared_budget: true,
        ..Default::default()
    };
    let sol = solve(&eval, &[0.3, 4.0], &config).unwrap();
    for point in &sol.trajectory[1..] {
        assert_eq!(point.beta[0], point.beta[1]);
    }
    let rrs = constrained_baselines(&eval, &GridSpec::default()).unwrap().rrs;
    assert!((sol.last().inv_efficiency / rrs.inv_efficiency - 1.0).abs() < 1e-6);
}

#[test]
fn solver_is_deterministic() {
    let p = corpus::load("three_techniques").unwrap().unwrap();
    let eval = Evaluator::new(&p, WeightMode::BudgetAware, VarianceModel::Simplified);
    let a = solve(&eval, &[0.5, 2.0, 1.0], &SolverConfig::default());
    let eval = Evaluator::new(&p, WeightMode::BudgetAware, VarianceModel::Simplified);
    let b = solve(&eval, &[0.5, 2.0, 1.0], &SolverConfig::default());
    assert_eq!(a.map(|s| s.trajectory), b.map(|s| s.trajectory));
}

#[test]
fn invalid_inputs_are_rejected() {
    let p = corpus::load("symmetric").unwrap().unwrap();
    let eval = unaware(&p);
    assert!(matches!(
        solve(&eval, &[0.01, 1.0], &SolverConfig::default()),
        Err(FixedPointError::InitOutsideClamp { index: 0, .. })
    ));
    assert!(solve(&eval, &[1.0], &SolverConfig::default()).is_err());
}
