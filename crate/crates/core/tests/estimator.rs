//! Estimator properties over the corpus and randomized configurations.

use mars_core::estimator::{
    balance_weights, estimate_batch, low_discrepancy_round, run_estimator, stochastic_round, Normalization, Rounding,
};
use mars_core::{corpus, Budgets, WeightMode};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn randomized_configurations_are_unbiased() {
    let problems = corpus::all().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for config in 0..20 {
        let p = &problems[rng.random_range(0..problems.len())];
        let beta: Vec<f64> = (0..p.n_techniques())
            .map(|_| (rng.random_range(0.05f64.ln()..5f64.ln())).exp())
            .collect();
        let mode = if rng.random::<bool>() {
            WeightMode::BudgetAware
        } else {
            WeightMode::BudgetUnaware
        };
        let rounding = if rng.random::<bool>() {
            Rounding::LowDiscrepancy
        } else {
            Rounding::Naive
        };
        let b = Budgets::new(beta.clone()).unwrap();
        let stats = estimate_batch(p, &b, mode, rounding, Normalization::RealValued, 20_000, config).unwrap();
        let truth = p.integral().unwrap();
        assert!(
            (stats.mean - truth).abs() < 4.0 * stats.std_err(),
            "{} {beta:?} {mode:?} {rounding:?}: {} vs {truth} (se {})",
            p.name(),
            stats.mean,
            stats.std_err()
        );
    }
}

#[test]
fn weights_partition_unity_on_the_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in corpus::all().unwrap() {
        let (a, b) = p.domain();
        for _ in 0..1000 {
            let x = rng.random_range(a..b);
            let beta = Budgets::new((0..p.n_techniques()).map(|_| rng.random_range(0.05..20.0)).collect()).unwrap();
            for mode in [WeightMode::BudgetUnaware, WeightMode::BudgetAware] {
                let w = match balance_weights(&p, x, mode, &beta) {
                    Ok(w) => w,
                    // Only subintegrands that vanish at x may lack an admissible density.
                    Err(_) => continue,
                };
                for i in 0..p.n_subintegrands() {
                    assert!(
                        (w.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12,
                        "{} x={x}",
                        p.name()
                    );
                    for t in 0..p.n_techniques() {
                        if !p.estimates(i, t) {
                            assert_eq!(w.get(i, t), 0.0);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn rounding_expectations_are_exact_over_a_u_grid() {
    // Midpoints of 2^20 cells: every breakpoint of the rounding functions used below is a
    // multiple of 2^-20, so the grid average is exact.
    let n = 1usize << 20;
    let budgets = [0.25, 1.5, 2.75, 0.125];
    let mut sums = [0.0f64; 4];
    let mut single = 0.0;
    for k in 0..n {
        let u = (k as f64 + 0.5) / n as f64;
        for (s, g) in sums.iter_mut().zip(low_discrepancy_round(&budgets, u)) {
            *s += g as f64;
        }
        single += stochastic_round(2.375, u) as f64;
    }
    for (s, b) in sums.iter().zip(budgets) {
        assert!((s / n as f64 - b).abs() < 1e-12);
    }
    assert!((single / n as f64 - 2.375).abs() < 1e-12);
}

#[test]
fn equal_seeds_give_identical_realizations() {
    let p = corpus::load("three_techniques").unwrap().unwrap();
    let b = Budgets::new(vec![0.4, 1.6, 2.2]).unwrap();
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..100)
            .map(|_| run_estimator(&p, &b, WeightMode::BudgetAware, Rounding::LowDiscrepancy, &mut rng).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(1), draw(1));
    assert_ne!(draw(1), draw(2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn low_discrepancy_total_stays_within_one(beta in proptest::collection::vec(0.01f64..6.0, 1..8), u in 0.0f64..1.0) {
        let g = low_discrepancy_round(&beta, u);
        let total: f64 = beta.iter().sum();
        let gt = g.iter().sum::<u64>() as f64;
        prop_assert!(gt == total.floor() || gt == total.ceil() || (gt - total).abs() < 1e-9);
    }

    #[test]
    fn low_discrepancy_matches_in_single_precision(beta in proptest::collection::vec(0.05f64..6.0, 1..5), u in 0.0f64..1.0) {
        // Budgets and u on a coarse dyadic lattice are exact in both precisions.
        let q = |v: f64| (v * 64.0).round() / 64.0;
        let beta: Vec<f64> = beta.into_iter().map(q).filter(|&b| b > 0.0).collect();
        let u = q(u).min(63.0 / 64.0);
        let b32: Vec<f32> = beta.iter().map(|&b| b as f32).collect();
        prop_assert_eq!(low_discrepancy_round(&beta, u), low_discrepancy_round(&b32, u as f32));
    }
}
