//! Randomized invariants of the guide, the lobe and the budget lookup.

use mars_flatland::cache::{Allocation, CacheStats, Guide, TreeConfig, GUIDE_BINS, N_TECHNIQUES};
use mars_flatland::geometry::Vec2;
use mars_flatland::material::Lobe;
use mars_flatland::QuadTree;
use proptest::prelude::*;
use std::f64::consts::{FRAC_PI_2, TAU};

fn weights() -> impl Strategy<Value = [f64; GUIDE_BINS]> {
    prop::array::uniform16(prop_oneof![Just(0.0), 0.0f64..10.0])
        .prop_filter("some mass", |w| w.iter().sum::<f64>() > 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn guide_pdf_is_normalized_and_positive_where_it_samples(
        w in weights(),
        u in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
    ) {
        let g = Guide::from_weights(&w).unwrap();
        let width = TAU / GUIDE_BINS as f64;
        let mass: f64 = (0..GUIDE_BINS).map(|k| g.pdf(-TAU / 2.0 + (k as f64 + 0.5) * width) * width).sum();
        prop_assert!((mass - 1.0).abs() < 1e-12);
        let psi = g.sample(u.0, u.1, u.2);
        prop_assert!((-TAU / 2.0..=TAU / 2.0).contains(&psi));
        prop_assert!(g.pdf(psi) > 0.0);
        if u.0 >= 0.01 {
            prop_assert!(g.probabilities()[Guide::bin(psi)] > 0.0);
        }
    }

    #[test]
    fn lobe_samples_stay_on_the_lobe(exponent in 0.0f64..500.0, u in 0.0f64..1.0) {
        let lobe = Lobe::new(exponent);
        let phi = lobe.sample(u);
        prop_assert!((-FRAC_PI_2..=FRAC_PI_2).contains(&phi));
        prop_assert!(lobe.pdf(phi) > 0.0 || phi == FRAC_PI_2);
    }

    #[test]
    fn budgets_respect_the_clamp(
        samples in prop::collection::vec((0usize..N_TECHNIQUES, 0.0f64..100.0, 1u64..50), 1..200),
        image in (1e-6f64..10.0, 1.0f64..100.0),
        prefactor in 1e-6f64..1e6,
    ) {
        let mut tree = QuadTree::new((Vec2::new(-1.0, -1.0), Vec2::new(1.0, 1.0)));
        let mut stats = CacheStats::new(1);
        for &(t, v, rays) in &samples {
            stats.leaves[0].techniques[t].push(v, rays);
        }
        tree.update(&stats, image, &TreeConfig::default());
        let clamp = (0.05, 20.0);
        for allocation in [Allocation::PerTechnique, Allocation::Shared] {
            let b = tree.budgets(0, prefactor, allocation, clamp);
            for (t, &bt) in b.iter().enumerate() {
                prop_assert!((clamp.0..=clamp.1).contains(&bt), "{allocation:?} {t}: {bt}");
                if allocation == Allocation::PerTechnique && stats.leaves[0].techniques[t].count == 0 {
                    prop_assert_eq!(bt, 1.0);
                }
            }
        }
    }
}
