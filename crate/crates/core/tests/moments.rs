//! Quadrature moments against brute-force Monte Carlo, and estimator variance against the
//! variance models.

use mars_core::efficiency::{low_discrepancy_variance, secondary_variance, technique_moments};
use mars_core::estimator::{estimate_batch, Normalization, Rounding};
use mars_core::oracle::mc_moments;
use mars_core::quadrature::QuadratureOptions;
use mars_core::{corpus, Budgets, VarianceModel, WeightMode};

fn asym_cost() -> mars_core::MisProblem {
    corpus::load(corpus::ASYMMETRIC).unwrap().unwrap()
}

#[test]
fn quadrature_moments_match_ten_million_samples() {
    let p = asym_cost();
    for (mode, beta) in [
        (WeightMode::BudgetUnaware, [1.0, 1.0]),
        (WeightMode::BudgetAware, [1.7, 0.4]),
    ] {
        let b = Budgets::new(beta.to_vec()).unwrap();
        let quad = technique_moments(&p, &beta, mode, &QuadratureOptions::default()).unwrap();
        let mc = mc_moments(&p, &b, mode, 10_000_000, 11).unwrap();
        for t in 0..2 {
            let (first, second) = &mc[t];
            let e_rel = (first.mean - quad[t].first_moment).abs() / quad[t].first_moment;
            let s_rel = (second.mean - quad[t].second_moment).abs() / quad[t].second_moment;
            assert!(e_rel < 1e-3, "{mode:?} t={t}: first moment off by {e_rel:e}");
            assert!(s_rel < 1e-3, "{mode:?} t={t}: second moment off by {s_rel:e}");
            // Also consistent with the sampling noise.
            assert!((first.mean - quad[t].first_moment).abs() < 4.0 * first.std_err());
            assert!((second.mean - quad[t].second_moment).abs() < 4.0 * second.std_err());
        }
    }
}

#[test]
fn symmetric_techniques_split_the_integral() {
    let p = mars_core::MisProblem::from_json(
        r#"{"domain": [0, 2], "subintegrands": ["x^2 + 1"],
            "techniques": [{"kind": "uniform"}, {"kind": "uniform"}],
            "indicator": [[true, true]], "costs": [1, 1], "overhead_cost": 0, "overhead_variance": 0}"#,
    )
    .unwrap();
    let s = technique_moments(
        &p,
        &[0.7, 2.0],
        WeightMode::BudgetUnaware,
        &QuadratureOptions::default(),
    )
    .unwrap();
    let integral = 8.0 / 3.0 + 2.0;
    assert_eq!(s.len(), 2);
    for st in s.iter() {
        assert!((st.first_moment - integral / 2.0).abs() < 1e-12);
    }
}

#[test]
fn estimator_variance_matches_exact_model() {
    let p = asym_cost();
    let beta = [1.7, 0.4];
    let b = Budgets::new(beta.to_vec()).unwrap();
    for mode in [WeightMode::BudgetUnaware, WeightMode::BudgetAware] {
        let s = technique_moments(&p, &beta, mode, &QuadratureOptions::default()).unwrap();
        // The overhead variance is an abstract model term, so compare technique variances only.
        let predicted: f64 = s
            .iter()
            .zip(beta)
            .map(|(s, b)| secondary_variance(s, b, VarianceModel::ExactStochastic))
            .sum();
        let run = estimate_batch(&p, &b, mode, Rounding::Naive, Normalization::RealValued, 1_000_000, 5).unwrap();
        let rel = (run.variance() / predicted - 1.0).abs();
        assert!(
            rel < 0.02,
            "{mode:?}: empirical {} vs predicted {predicted} ({rel:e})",
            run.variance()
        );
        let integral = p.integral().unwrap();
        assert!(
            (run.mean - integral).abs() < 3.0 * run.std_err(),
            "{mode:?}: mean {} vs {integral}",
            run.mean
        );

        let ld_pred = low_discrepancy_variance(&s, &beta);
        let ld = estimate_batch(
            &p,
            &b,
            mode,
            Rounding::LowDiscrepancy,
            Normalization::RealValued,
            1_000_000,
            6,
        )
        .unwrap();
        let rel = (ld.variance() / ld_pred - 1.0).abs();
        assert!(
            rel < 0.02,
            "{mode:?}: low-discrepancy {} vs predicted {ld_pred}",
            ld.variance()
        );
    }
}

#[test]
fn nearest_rounding_model_matches_count_normalized_estimator() {
    let p = asym_cost();
    let beta = [2.5, 1.3];
    let b = Budgets::new(beta.to_vec()).unwrap();
    let s = technique_moments(&p, &beta, WeightMode::BudgetUnaware, &QuadratureOptions::default()).unwrap();
    let predicted: f64 = s
        .iter()
        .zip(beta)
        .map(|(s, b)| secondary_variance(s, b, VarianceModel::NearestRounding))
        .sum();
    let run = estimate_batch(
        &p,
        &b,
        WeightMode::BudgetUnaware,
        Rounding::Naive,
        Normalization::RoundedCount,
        1_000_000,
        9,
    )
    .unwrap();
    let rel = (run.variance() / predicted - 1.0).abs();
    assert!(rel < 0.02, "empirical {} vs predicted {predicted}", run.variance());
    let integral = p.integral().unwrap();
    assert!((run.mean - integral).abs() < 4.0 * run.std_err());
}
