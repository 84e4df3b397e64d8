//! Numerical checks of the large-noise behaviour of the subsampled Gaussian
//! mechanism: the fourth-order KL rate, Pinsker bounds on the distance to
//! the Gaussian surrogate, single-step PLRV moment bounds, and growth of the
//! calibrated σ with the number of iterations.
//!
//! KL quantities use `u = 1/σ` and compare `N(0, 1)` against the recentred
//! mixture `q·N(u − qu, 1) + (1 − q)·N(−qu, 1)`. With `x ~ N(0, 1)` the
//! divergence is `E_x[f_x(u)]`, where
//!
//! ```text
//! f_x(u) = −ln(q·e^A + (1 − q)·e^B),
//! A = x·u(1 − q) − u²(1 − q)²/2,    B = −x·q·u − q²u²/2.
//! ```

use std::io::Write;

use crate::calibrate::calibrate_sigma;
use crate::error::{invalid, Result};
use crate::mechanism::{check_epsilon, check_rate, check_sigma, gaussian_delta, PrivacyLossFn};
use crate::pld::AccountantConfig;
use crate::quadrature::{expect_std_normal, integrate, QuadratureOptions};
use crate::single_step::geometric_grid;
use crate::special::norm_pdf;

/// Half-width of the integration range in `x`.
pub const KL_RANGE: f64 = 12.0;
/// Largest `u` at which [`kl_rate_check`] judges the ratio.
pub const KL_RATE_U_MAX: f64 = 0.05;
/// Allowed distance of the final ratio from 1.
pub const KL_RATE_TOLERANCE: f64 = 0.02;
/// Slack on the moment bounds.
pub const MOMENT_SLACK: f64 = 1e-10;

fn kl_options() -> QuadratureOptions {
    QuadratureOptions { abs_tol: 1e-16, rel_tol: 1e-11, max_subintervals: 1 << 14 }
}

/// `f_x(u)`, accurate when both exponents are small.
pub fn kl_integrand(q: f64, u: f64, x: f64) -> f64 {
    let a = x * u * (1.0 - q) - 0.5 * (u * (1.0 - q)).powi(2);
    let b = -x * q * u - 0.5 * (q * u).powi(2);
    -(q * a.exp_m1() + (1.0 - q) * b.exp_m1()).ln_1p()
}

/// Coefficients of `u²`, `u³`, `u⁴` in the expansion of `f_x(u)` at
/// `u = 0` (the linear coefficient is zero).
pub fn kl_taylor_coefficients(q: f64, x: f64) -> [f64; 3] {
    let x2 = x * x;
    let x4 = x2 * x2;
    let c2 = 0.5 * q * (q - 1.0) * (x2 - 1.0);
    let c3 = -q * (q - 1.0) * (2.0 * q - 1.0) * x * (x2 - 3.0) / 6.0;
    let inner = 6.0 * q * q * (x4 - 4.0 * x2 + 2.0) - 6.0 * q * (x4 - 4.0 * x2 + 2.0) + x4 - 6.0 * x2 + 3.0;
    let c4 = q * (q - 1.0) * inner / 24.0;
    [c2, c3, c4]
}

/// Leading term `(1/4)(q − 1)²q²u⁴` of the KL divergence.
pub fn kl_leading_term(q: f64, u: f64) -> f64 {
    0.25 * ((q - 1.0) * q).powi(2) * u.powi(4)
}

fn kl_over_range(q: f64, u: f64, range: f64) -> Result<f64> {
    // The u² and u³ terms have zero mean; removing them leaves an O(u⁴)
    // integrand that the absolute tolerance can resolve.
    let reduced = |x: f64| {
        let [c2, c3, _] = kl_taylor_coefficients(q, x);
        kl_integrand(q, u, x) - u * u * (c2 + u * c3)
    };
    let r = expect_std_normal(reduced, range, kl_options())?;
    Ok(r.value.max(0.0))
}

/// `KL(N(0, 1) ‖ q·N(u − qu, 1) + (1 − q)·N(−qu, 1))` by adaptive
/// quadrature over `x ∈ [−12, 12]`.
pub fn kl_gaussian_vs_mixture(q: f64, u: f64) -> Result<f64> {
    check_rate(q)?;
    if !(u > 0.0 && u.is_finite()) {
        return invalid(format!("u must be positive, got {u}"));
    }
    if q == 0.0 || q == 1.0 {
        return Ok(0.0);
    }
    kl_over_range(q, u, KL_RANGE)
}

/// KL at a wider range, for stability checks.
pub fn kl_gaussian_vs_mixture_on(q: f64, u: f64, range: f64) -> Result<f64> {
    check_rate(q)?;
    kl_over_range(q, u, range)
}

/// One point of [`kl_rate_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlCheckResult {
    pub q: f64,
    pub u: f64,
    pub kl_value: f64,
    pub predicted_leading: f64,
    /// `kl_value / predicted_leading`; NaN when the prediction is zero.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KlRateReport {
    pub rows: Vec<KlCheckResult>,
    /// `q ∈ {0, 1}`: the two distributions coincide and there is no rate.
    pub degenerate: bool,
    /// Whether the final ratio is within 2% of 1. `None` when the check does
    /// not apply (degenerate case, or final `u` above 0.05).
    pub passed: Option<bool>,
}

/// Evaluates the KL along a strictly decreasing `u` sequence and compares it
/// with the leading term.
pub fn kl_rate_check(q: f64, u_sequence: &[f64]) -> Result<KlRateReport> {
    check_rate(q)?;
    if u_sequence.is_empty() {
        return invalid("u sequence must be nonempty");
    }
    if u_sequence.iter().any(|&u| u.is_nan() || u <= 0.0) || u_sequence.windows(2).any(|w| w[1] >= w[0]) {
        return invalid("u sequence must be positive and strictly decreasing");
    }
    let degenerate = q == 0.0 || q == 1.0;
    let mut rows = Vec::with_capacity(u_sequence.len());
    for &u in u_sequence {
        let kl_value = kl_gaussian_vs_mixture(q, u)?;
        let predicted_leading = kl_leading_term(q, u);
        let ratio = if predicted_leading > 0.0 { kl_value / predicted_leading } else { f64::NAN };
        rows.push(KlCheckResult { q, u, kl_value, predicted_leading, ratio });
    }
    let last = rows[rows.len() - 1];
    let passed = (!degenerate && last.u <= KL_RATE_U_MAX).then(|| (last.ratio - 1.0).abs() <= KL_RATE_TOLERANCE);
    Ok(KlRateReport { rows, degenerate, passed })
}

/// Pinsker bound `√(T·KL/2)` on the total variation between `T` steps of
/// the subsampled mechanism and of its Gaussian surrogate.
pub fn tv_bound_composed(q: f64, sigma: f64, iterations: u64) -> Result<f64> {
    check_sigma(sigma)?;
    let kl = kl_gaussian_vs_mixture(q, 1.0 / sigma)?;
    Ok((iterations as f64 * kl / 2.0).sqrt())
}

/// `(1 + e^ε)·tv_bound_composed(q, σ, T)`: bound on the difference between
/// δ(ε) of the subsampled mechanism and of the Gaussian mechanism with noise
/// `σ/q`.
pub fn ao_gap_bound(q: f64, sigma: f64, iterations: u64, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    Ok((1.0 + epsilon.exp()) * tv_bound_composed(q, sigma, iterations)?)
}

/// δ(ε) of `T` compositions of the Gaussian mechanism with noise `sigma`
/// and unit sensitivity.
pub fn gaussian_composed_delta(sigma: f64, iterations: u64, epsilon: f64) -> Result<f64> {
    check_sigma(sigma)?;
    check_epsilon(epsilon)?;
    Ok(gaussian_delta(sigma / (iterations as f64).sqrt(), epsilon))
}

/// Single-step PLRV moments and their bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentCheck {
    pub q: f64,
    pub sigma: f64,
    pub mean: f64,
    /// `q²/(2σ²)`.
    pub mean_lower_bound: f64,
    pub variance: f64,
    /// `1/σ² + 1/(4σ⁴)`.
    pub variance_upper_bound: f64,
    pub pass: bool,
}

fn plrv_expectation<F: Fn(f64) -> f64>(loss: &PrivacyLossFn, g: F) -> Result<f64> {
    let (sigma, q) = (loss.sigma(), loss.q());
    let opts = QuadratureOptions { abs_tol: 1e-15, rel_tol: 1e-13, max_subintervals: 1 << 14 };
    let shifted = expect_std_normal(|z| g(loss.loss_at(1.0 + sigma * z)), KL_RANGE, opts)?.value;
    let centred = if q < 1.0 { expect_std_normal(|z| g(loss.loss_at(sigma * z)), KL_RANGE, opts)?.value } else { 0.0 };
    Ok(q * shifted + (1.0 - q) * centred)
}

/// Mean and variance of the single-step privacy loss under `P`, by
/// quadrature, checked against `mean ≥ q²/(2σ²)` and
/// `variance ≤ 1/σ² + 1/(4σ⁴)` up to [`MOMENT_SLACK`].
pub fn plrv_moment_check(q: f64, sigma: f64) -> Result<MomentCheck> {
    let loss = PrivacyLossFn::new(sigma, q)?;
    let mean = plrv_expectation(&loss, |l| l)?;
    let variance = plrv_expectation(&loss, |l| (l - mean) * (l - mean))?;
    let s2 = sigma * sigma;
    let mean_lower_bound = q * q / (2.0 * s2);
    let variance_upper_bound = 1.0 / s2 + 1.0 / (4.0 * s2 * s2);
    let pass = mean >= mean_lower_bound - MOMENT_SLACK && variance <= variance_upper_bound + MOMENT_SLACK;
    Ok(MomentCheck { q, sigma, mean, mean_lower_bound, variance, variance_upper_bound, pass })
}

/// Default `(q, σ)` grid for the moment checks: ten rates in `[0.1, 1]`
/// times ten geometrically spaced σ in `[0.25, 20]`.
pub fn moment_grid() -> Vec<(f64, f64)> {
    let sigmas = geometric_grid(0.25, 20.0, 10);
    (1..=10).flat_map(|k| sigmas.iter().map(move |&s| (0.1 * k as f64, s))).collect()
}

/// Total `P`-probability of the mixture by quadrature; used to sanity-check
/// the density.
pub fn mixture_mass(q: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    check_rate(q)?;
    let lo = -KL_RANGE * sigma;
    let hi = 1.0 + KL_RANGE * sigma;
    let density = |t: f64| (q * norm_pdf((t - 1.0) / sigma) + (1.0 - q) * norm_pdf(t / sigma)) / sigma;
    Ok(integrate(density, lo, hi, QuadratureOptions::default())?.value)
}

/// One row of [`sigma_growth_witness`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthRow {
    pub iterations: u64,
    pub sigma: f64,
    pub sigma_sq_over_t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrowthReport {
    pub rows: Vec<GrowthRow>,
    pub min_ratio: f64,
    /// `(σ²/T)` at the last `T` divided by its value at the first.
    pub last_over_first: f64,
    /// `min_ratio > 0` and `last_over_first ≥ 0.5`.
    pub pass: bool,
}

/// Calibrates σ at each `T` and reports `σ²/T`.
pub fn sigma_growth_witness(
    q: f64,
    epsilon: f64,
    delta: f64,
    iterations: &[u64],
    cfg: &AccountantConfig,
) -> Result<GrowthReport> {
    if iterations.is_empty() || iterations.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("iteration counts must be nonempty and strictly increasing");
    }
    let mut rows = Vec::with_capacity(iterations.len());
    for &t in iterations {
        let sigma = calibrate_sigma(q, t, epsilon, delta, cfg)?.sigma;
        rows.push(GrowthRow { iterations: t, sigma, sigma_sq_over_t: sigma * sigma / t as f64 });
    }
    let min_ratio = rows.iter().map(|r| r.sigma_sq_over_t).fold(f64::INFINITY, f64::min);
    let last_over_first = rows[rows.len() - 1].sigma_sq_over_t / rows[0].sigma_sq_over_t;
    Ok(GrowthReport { rows, min_ratio, last_over_first, pass: min_ratio > 0.0 && last_over_first >= 0.5 })
}

pub fn write_kl_csv<W: Write>(rows: &[KlCheckResult], mut out: W) -> std::io::Result<()> {
    writeln!(out, "q,u,kl,predicted,ratio")?;
    for r in rows {
        writeln!(out, "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}", r.q, r.u, r.kl_value, r.predicted_leading, r.ratio)?;
    }
    Ok(())
}

pub fn write_moments_csv<W: Write>(rows: &[MomentCheck], mut out: W) -> std::io::Result<()> {
    writeln!(out, "q,sigma,mean,mean_bound,var,var_bound,pass")?;
    for r in rows {
        writeln!(
            out,
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}",
            r.q, r.sigma, r.mean, r.mean_lower_bound, r.variance, r.variance_upper_bound, r.pass
        )?;
    }
    Ok(())
}

pub fn write_growth_csv<W: Write>(rows: &[GrowthRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "T,sigma,sigma_sq_over_T")?;
    for r in rows {
        writeln!(out, "{},{:.12e},{:.12e}", r.iterations, r.sigma, r.sigma_sq_over_t)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{gauss_hermite, gauss_hermite_expectation};

    #[test]
    fn kl_vanishes_in_degenerate_cases() {
        assert_eq!(kl_gaussian_vs_mixture(1.0, 0.7).unwrap(), 0.0);
        assert_eq!(kl_gaussian_vs_mixture(0.0, 0.7).unwrap(), 0.0);
        assert!(kl_gaussian_vs_mixture(0.3, 1e-8).unwrap() <= 1e-20);
        assert!(kl_gaussian_vs_mixture(0.3, 0.0).is_err());
    }

    #[test]
    fn kl_leading_order() {
        let kl = kl_gaussian_vs_mixture(0.5, 0.1).unwrap();
        let ratio = kl / kl_leading_term(0.5, 0.1);
        assert!((0.95..=1.05).contains(&ratio), "{ratio}");
    }

    #[test]
    fn kl_agrees_with_gauss_hermite() {
        let rule = gauss_hermite(200);
        for &(q, u) in &[(0.5, 0.4), (0.1, 0.1), (0.9, 1.0)] {
            let adaptive = kl_gaussian_vs_mixture(q, u).unwrap();
            let fixed = gauss_hermite_expectation(&rule, |x| kl_integrand(q, u, x));
            assert!((adaptive / fixed - 1.0).abs() < 1e-9, "q={q} u={u} {adaptive} {fixed}");
        }
    }

    #[test]
    fn kl_is_stable_under_a_wider_range() {
        for &(q, u) in &[(0.5, 0.2), (0.1, 0.05)] {
            let narrow = kl_gaussian_vs_mixture(q, u).unwrap();
            let wide = kl_gaussian_vs_mixture_on(q, u, 16.0).unwrap();
            assert!((narrow / wide - 1.0).abs() < 1e-9, "{narrow} {wide}");
        }
    }

    #[test]
    fn low_order_taylor_terms_vanish_in_expectation() {
        let rule = gauss_hermite(200);
        for &q in &[0.1, 0.5, 0.9] {
            let e2 = gauss_hermite_expectation(&rule, |x| kl_taylor_coefficients(q, x)[0]);
            let e3 = gauss_hermite_expectation(&rule, |x| kl_taylor_coefficients(q, x)[1]);
            let e4 = gauss_hermite_expectation(&rule, |x| kl_taylor_coefficients(q, x)[2]);
            assert!(e2.abs() < 1e-12 && e3.abs() < 1e-12);
            assert!((e4 - 0.25 * (q * (q - 1.0)).powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn taylor_expansion_matches_integrand() {
        let (q, x, u) = (0.3, 0.7, 1e-2);
        let [c2, c3, c4] = kl_taylor_coefficients(q, x);
        let series = c2 * u * u + c3 * u.powi(3) + c4 * u.powi(4);
        assert!((kl_integrand(q, u, x) - series).abs() < 1e-11);
    }

    #[test]
    fn rate_check_flags() {
        let r = kl_rate_check(0.5, &[0.4, 0.2, 0.1, 0.05, 0.025]).unwrap();
        assert_eq!(r.passed, Some(true));
        let ratios: Vec<f64> = r.rows.iter().map(|x| (x.ratio - 1.0).abs()).collect();
        assert!(ratios.windows(2).all(|w| w[1] <= w[0]), "{ratios:?}");
        let d = kl_rate_check(0.0, &[0.1, 0.05]).unwrap();
        assert!(d.degenerate && d.passed.is_none());
        assert!(kl_rate_check(0.5, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn tv_and_gap_bounds() {
        assert_eq!(tv_bound_composed(1.0, 2.0, 10).unwrap(), 0.0);
        assert!(tv_bound_composed(0.5, 10.0, 100).unwrap() < 0.02);
        let ratio = tv_bound_composed(0.2, 20.0, 400).unwrap() / tv_bound_composed(0.2, 10.0, 100).unwrap();
        assert!(ratio <= 0.55, "{ratio}");
        let g1 = ao_gap_bound(0.3, 2.0, 10, 1.0).unwrap();
        let g2 = ao_gap_bound(0.3, 4.0, 10, 1.0).unwrap();
        assert!(g2 < g1);
    }

    #[test]
    fn moment_bounds() {
        let m = plrv_moment_check(0.5, 2.0).unwrap();
        assert_eq!(m.mean_lower_bound, 0.03125);
        assert_eq!(m.variance_upper_bound, 0.265625);
        assert!(m.pass);
        let g = plrv_moment_check(1.0, 1.0).unwrap();
        assert!((g.mean - 0.5).abs() < 1e-12 && (g.variance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_is_normalized() {
        assert!((mixture_mass(1.0, 1.0).unwrap() - 1.0).abs() < 1e-10);
        assert!((mixture_mass(0.3, 0.2).unwrap() - 1.0).abs() < 1e-10);
    }
}
