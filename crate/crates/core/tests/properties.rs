use proptest::prelude::*;
use sgm_core::{
    accountant_delta, analytic_decomposition, analytic_delta_single_step, clip, compose_mechanism, delta_from_pld,
    AccountantConfig, GradientSet, MechanismParams, PrivacyLossFn, Rounding,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_monotone_and_invertible(sigma in 0.3f64..10.0, q in 0.001f64..1.0, t in -5.0f64..5.0, dt in 1e-6f64..1.0) {
        let loss = PrivacyLossFn::new(sigma, q).unwrap();
        prop_assert!(loss.loss_at(t + dt) >= loss.loss_at(t));
        let l = loss.loss_at(t);
        if l > loss.min_loss() + 1e-9 {
            let back = loss.inverse(l);
            prop_assert!((back - t).abs() <= 1e-6 * (1.0 + sigma * sigma), "{back} vs {t}");
        }
    }

    #[test]
    fn discrete_bounds_bracket_closed_form(sigma in 0.5f64..6.0, q in 0.01f64..1.0, epsilon in 0.05f64..4.0) {
        let cfg = AccountantConfig::with_grid_step(1e-3);
        let params = MechanismParams::new(sigma, q, 1.0, 1).unwrap();
        let pess = accountant_delta(&params, epsilon, &cfg, Rounding::Pessimistic).unwrap();
        let opt = accountant_delta(&params, epsilon, &cfg, Rounding::Optimistic).unwrap();
        let exact = analytic_delta_single_step(sigma, q, epsilon).unwrap();
        prop_assert!(pess >= exact * (1.0 - 1e-12) && exact >= opt * (1.0 - 1e-12), "{opt} {exact} {pess}");
    }

    #[test]
    fn composed_delta_falls_with_epsilon(sigma in 0.7f64..4.0, q in 0.05f64..1.0, t in 1u64..20) {
        let cfg = AccountantConfig::with_grid_step(1e-3);
        let params = MechanismParams::new(sigma, q, 1.0, t).unwrap();
        for rounding in [Rounding::Pessimistic, Rounding::Optimistic] {
            let pld = compose_mechanism(&params, &cfg, rounding).unwrap();
            prop_assert!((pld.total_mass() - 1.0).abs() <= 1e-9);
            let mut previous = f64::INFINITY;
            for k in 1..40 {
                let d = delta_from_pld(&pld, 0.1 * k as f64).unwrap();
                prop_assert!(d <= previous);
                previous = d;
            }
        }
    }

    #[test]
    fn clipping_bounds_the_norm(v in prop::collection::vec(-100.0f64..100.0, 1..8), c in 0.01f64..50.0) {
        let clipped = clip(&v, c);
        let norm = clipped.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm <= c * (1.0 + 1e-12));
        let original = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if original <= c {
            prop_assert_eq!(clipped, v);
        }
    }

    #[test]
    fn subsampling_variance_scales_with_clip_squared(seed in 0u64..1000, q in 0.05f64..1.0, scale in 0.5f64..4.0) {
        let base = GradientSet::synthetic(6, 3, 1.0, 0.8, seed).unwrap();
        let scaled = GradientSet::new(
            base.vectors().iter().map(|v| v.iter().map(|x| x * scale).collect()).collect(),
            0.8 * scale,
        ).unwrap();
        let a = analytic_decomposition(&base, q, 1.0, 1).unwrap();
        let b = analytic_decomposition(&scaled, q, 1.0, 1).unwrap();
        prop_assert!((b.subsampling_var - scale * scale * a.subsampling_var).abs() <= 1e-9 * (1.0 + b.subsampling_var));
        prop_assert!((a.total_var - a.subsampling_var - a.effective_noise_var).abs() <= 1e-12 * a.total_var);
    }
}
