use sgm_core::pld::convolve;
use sgm_core::{
    compose_mechanism, delta_from_pld, discretize, self_compose, AccountantConfig, DiscretePld, MechanismParams,
    PrivacyLossFn, Rounding,
};

fn single(sigma: f64, q: f64, rounding: Rounding, cfg: &AccountantConfig) -> DiscretePld {
    discretize(&PrivacyLossFn::new(sigma, q).unwrap(), cfg, rounding).unwrap()
}

#[test]
fn repeated_squaring_is_associative() {
    let cfg = AccountantConfig::with_grid_step(1e-3);
    for rounding in [Rounding::Pessimistic, Rounding::Optimistic] {
        let base = single(1.2, 0.3, rounding, &cfg);
        let six = self_compose(&base, 6, &cfg).unwrap();
        let nested = self_compose(&self_compose(&base, 2, &cfg).unwrap(), 3, &cfg).unwrap();
        for epsilon in [0.25, 0.5, 1.0, 2.0] {
            let (a, b) = (delta_from_pld(&six, epsilon).unwrap(), delta_from_pld(&nested, epsilon).unwrap());
            assert!((a - b).abs() <= 1e-10, "{rounding} ε={epsilon}: {a} vs {b}");
        }
    }
}

#[test]
fn composition_preserves_mass() {
    let cfg = AccountantConfig::default();
    for rounding in [Rounding::Pessimistic, Rounding::Optimistic] {
        let params = MechanismParams::new(0.9, 0.2, 1.0, 100).unwrap();
        let pld = compose_mechanism(&params, &cfg, rounding).unwrap();
        assert!((pld.total_mass() - 1.0).abs() <= 1e-9);
        assert!(pld.masses().iter().all(|&m| m >= 0.0));
    }
}

#[test]
fn fft_convolution_matches_direct_sum() {
    let n = 300;
    let raw: Vec<f64> = (0..n).map(|i| ((i as f64 * 0.37).sin() + 1.1) * (1.0 + (i % 7) as f64)).collect();
    let total: f64 = raw.iter().sum();
    let masses: Vec<f64> = raw.iter().map(|m| m / total).collect();
    let a = DiscretePld::from_parts(-40, 0.01, masses.clone(), 0.0, 0.0, Rounding::Pessimistic).unwrap();
    let b = DiscretePld::from_parts(
        5,
        0.01,
        masses[..200].iter().map(|m| m / masses[..200].iter().sum::<f64>()).collect(),
        0.0,
        0.0,
        Rounding::Pessimistic,
    )
    .unwrap();
    let c = convolve(&a, &b, 0.0, 1 << 20).unwrap();
    let mut expected = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.masses().iter().enumerate() {
        for (j, y) in b.masses().iter().enumerate() {
            expected[i + j] += x * y;
        }
    }
    assert_eq!(c.origin_index(), -35);
    assert_eq!(c.len(), expected.len());
    for (got, want) in c.masses().iter().zip(&expected) {
        assert!((got - want).abs() <= 1e-15, "{got} vs {want}");
    }
}

#[test]
fn finer_grids_shrink_the_sandwich() {
    let gap = |h: f64| {
        let cfg = AccountantConfig::with_grid_step(h);
        let params = MechanismParams::new(1.5, 0.3, 1.0, 8).unwrap();
        let pess = compose_mechanism(&params, &cfg, Rounding::Pessimistic).unwrap();
        let opt = compose_mechanism(&params, &cfg, Rounding::Optimistic).unwrap();
        delta_from_pld(&pess, 0.73).unwrap() - delta_from_pld(&opt, 0.73).unwrap()
    };
    let (coarse, fine) = (gap(2e-3), gap(1e-3));
    assert!(fine > 0.0 && fine <= 0.5 * coarse, "{coarse} -> {fine}");
}

#[test]
fn one_composition_is_identity() {
    let cfg = AccountantConfig::with_grid_step(1e-3);
    let base = single(2.0, 0.5, Rounding::Pessimistic, &cfg);
    assert_eq!(self_compose(&base, 1, &cfg).unwrap(), base);
}
