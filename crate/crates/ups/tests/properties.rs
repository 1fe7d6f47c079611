//! Randomized invariant checks for the tuning primitives.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ups::tuning::{build_proposal, choose_m, quantile_type7, LambdaGrid};
use ups::unbiased::cost_of;

proptest! {
    /// Quantiles stay inside the data range and are monotone in p.
    #[test]
    fn quantile_bounds_and_monotonicity(
        mut xs in proptest::collection::vec(-1e6f64..1e6, 1..40),
        p in 0.0f64..1.0,
        q in 0.0f64..1.0,
    ) {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (lo, hi) = (p.min(q), p.max(q));
        let vlo = quantile_type7(&xs, lo);
        let vhi = quantile_type7(&xs, hi);
        prop_assert!(xs[0] <= vlo && vhi <= xs[xs.len() - 1]);
        prop_assert!(vlo <= vhi);
    }

    /// The proposal built from any admissible sqrt_m2 profile is a
    /// probability density: positive everywhere, masses summing to 1,
    /// and the sampled density value always matches pointwise
    /// evaluation.
    #[test]
    fn proposal_is_a_density(
        values in proptest::collection::vec(0.0f64..1e3, 3..12),
        seed in 0u64..1000,
    ) {
        prop_assume!(values.iter().any(|&v| v > 0.0));
        let grid = LambdaGrid::equispaced(values.len() - 1).unwrap();
        let q = build_proposal(&grid, &values).unwrap();
        let total: f64 = q.masses().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(q.masses().iter().all(|&m| m > 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let (lambda, density) = q.sample(&mut rng);
            prop_assert!((0.0..=1.0).contains(&lambda));
            prop_assert!((density - q.density(lambda)).abs() <= 1e-12 * density.abs());
            prop_assert!(density > 0.0);
        }
    }

    /// choose_m balances expected cost: m_l + tau_mean_l lands in
    /// [5 max k + max tau_mean, 5 max k + max tau_mean + 1) for every l.
    #[test]
    fn choose_m_balances_cost(
        pairs in proptest::collection::vec((1usize..50, 1.0f64..200.0), 1..10),
    ) {
        let ks: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let taus: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let ms = choose_m(&ks, &taus);
        let k_max = *ks.iter().max().unwrap() as f64;
        let tau_max = taus.iter().cloned().fold(f64::MIN, f64::max);
        let target = 5.0 * k_max + tau_max;
        for (&m, &t) in ms.iter().zip(&taus) {
            let c = m as f64 + t;
            // ceil() may round an exact integer argument up by one ulp's
            // worth, so allow the closed interval.
            prop_assert!(
                c >= target - 1e-9 && c <= target + 1.0 + 1e-9,
                "c = {c}, target = {target}"
            );
        }
    }

    /// Cost accounting: nonnegative, monotone in both arguments, and
    /// exactly tau - 1 + max(tau, m).
    #[test]
    fn cost_identity(tau in 1usize..10_000, m in 0usize..10_000) {
        let c = cost_of(tau, m);
        prop_assert_eq!(c, tau - 1 + tau.max(m));
        prop_assert!(cost_of(tau + 1, m) >= c);
        prop_assert!(cost_of(tau, m + 1) >= c);
    }
}
