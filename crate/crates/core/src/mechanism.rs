//! Mechanism parameters, the dominating pair of the Poisson subsampled
//! Gaussian mechanism, its privacy loss function, and the closed-form δ of a
//! single iteration.
//!
//! Under add/remove neighbourhood with sensitivity 1 the mechanism is
//! dominated by the pair
//!
//! ```text
//! P = q·N(1, σ²) + (1 − q)·N(0, σ²),     Q = N(0, σ²)
//! ```
//!
//! whose privacy loss `ln(dP/dQ)(t) = ln(q·exp((2t − 1)/(2σ²)) + 1 − q)` is
//! monotone in `t`. Everything downstream works with this pair.

use crate::error::{invalid, Result};
use crate::special::{ln_add_exp, ln_exp_m1, norm_cdf, norm_ln_sf, norm_pdf, norm_sf};

/// `(σ, q, Δ, T)` of a composed Poisson subsampled Gaussian mechanism.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MechanismParams {
    pub sigma: f64,
    pub q: f64,
    pub sensitivity: f64,
    pub iterations: u64,
}

impl MechanismParams {
    pub fn new(sigma: f64, q: f64, sensitivity: f64, iterations: u64) -> Result<Self> {
        check_sigma(sigma)?;
        check_rate(q)?;
        if !(sensitivity > 0.0 && sensitivity.is_finite()) {
            return invalid(format!("sensitivity must be positive, got {sensitivity}"));
        }
        if iterations == 0 {
            return invalid("iterations must be at least 1");
        }
        Ok(Self { sigma, q, sensitivity, iterations })
    }

    /// Equivalent parameters with unit sensitivity. Only `σ/Δ` matters for
    /// accounting, so results computed from either form are identical.
    pub fn normalized(&self) -> Self {
        Self { sigma: self.sigma / self.sensitivity, sensitivity: 1.0, ..*self }
    }

    /// Noise multiplier `σ/Δ`.
    pub fn noise_multiplier(&self) -> f64 {
        self.sigma / self.sensitivity
    }

    pub fn loss_fn(&self) -> PrivacyLossFn {
        PrivacyLossFn { sigma: self.noise_multiplier(), q: self.q }
    }
}

/// An `(ε, δ)` pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        if !(0.0..=1.0).contains(&delta) {
            return invalid(format!("delta must lie in [0, 1], got {delta}"));
        }
        Ok(Self { epsilon, delta })
    }
}

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        invalid(format!("sigma must be positive and finite, got {sigma}"))
    }
}

pub(crate) fn check_rate(q: f64) -> Result<()> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        invalid(format!("sampling rate q must lie in [0, 1], got {q}"))
    }
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon >= 0.0 {
        Ok(())
    } else {
        invalid(format!("epsilon must be nonnegative, got {epsilon}"))
    }
}

/// Privacy loss `ℓ(t) = ln(p(t)/q(t))` of the dominating pair, for unit
/// sensitivity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyLossFn {
    sigma: f64,
    q: f64,
}

impl PrivacyLossFn {
    pub fn new(sigma: f64, q: f64) -> Result<Self> {
        check_sigma(sigma)?;
        check_rate(q)?;
        Ok(Self { sigma, q })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Exponent of the Gaussian likelihood ratio, `(2t − 1)/(2σ²)`.
    #[inline]
    pub(crate) fn gaussian_exponent(&self, t: f64) -> f64 {
        (2.0 * t - 1.0) / (2.0 * self.sigma * self.sigma)
    }

    /// `ℓ(t)`, evaluated as a log-sum-exp so it stays finite far into both
    /// tails.
    pub fn loss_at(&self, t: f64) -> f64 {
        let u = self.gaussian_exponent(t);
        if self.q == 0.0 {
            0.0
        } else if self.q == 1.0 {
            u
        } else {
            ln_add_exp(self.q.ln() + u, (-self.q).ln_1p())
        }
    }

    /// Infimum of the loss, `ln(1 − q)` (−∞ for `q = 1`).
    pub fn min_loss(&self) -> f64 {
        (-self.q).ln_1p()
    }

    /// Inverse of [`loss_at`](Self::loss_at):
    /// `t(ℓ) = σ²·ln((e^ℓ − (1 − q))/q) + 1/2`. Returns −∞ at or below
    /// [`min_loss`](Self::min_loss). Undefined (NaN) for `q = 0`, where the
    /// loss is constant.
    pub fn inverse(&self, loss: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        if self.q == 0.0 {
            return f64::NAN;
        }
        if loss == f64::INFINITY {
            return f64::INFINITY;
        }
        let log_ratio = if self.q == 1.0 {
            loss
        } else {
            let floor = self.min_loss();
            if loss <= floor {
                return f64::NEG_INFINITY;
            }
            // e^ℓ − (1 − q) = (1 − q)·expm1(ℓ − ln(1 − q))
            floor + ln_exp_m1(loss - floor) - self.q.ln()
        };
        s2 * log_ratio + 0.5
    }
}

/// `ln(dP/dQ)` at `t` for the given loss function.
pub fn privacy_loss(loss_fn: &PrivacyLossFn, t: f64) -> f64 {
    loss_fn.loss_at(t)
}

/// Densities (and CDFs) of the dominating pair `(P, Q)`.
#[derive(Clone, Copy, Debug)]
pub struct DominatingPair {
    pub sigma: f64,
    pub q: f64,
}

impl DominatingPair {
    /// Mixture density `q·N(t; 1, σ²) + (1 − q)·N(t; 0, σ²)`.
    pub fn p_density(&self, t: f64) -> f64 {
        let s = self.sigma;
        (self.q * norm_pdf((t - 1.0) / s) + (1.0 - self.q) * norm_pdf(t / s)) / s
    }

    /// `N(t; 0, σ²)`.
    pub fn q_density(&self, t: f64) -> f64 {
        norm_pdf(t / self.sigma) / self.sigma
    }

    pub fn p_cdf(&self, t: f64) -> f64 {
        let s = self.sigma;
        self.q * norm_cdf((t - 1.0) / s) + (1.0 - self.q) * norm_cdf(t / s)
    }

    pub fn p_sf(&self, t: f64) -> f64 {
        let s = self.sigma;
        self.q * norm_sf((t - 1.0) / s) + (1.0 - self.q) * norm_sf(t / s)
    }

    pub fn q_cdf(&self, t: f64) -> f64 {
        norm_cdf(t / self.sigma)
    }

    pub fn loss_fn(&self) -> PrivacyLossFn {
        PrivacyLossFn { sigma: self.sigma, q: self.q }
    }
}

/// The dominating pair for `params`, after normalising to unit sensitivity.
pub fn dominating_pair_densities(params: &MechanismParams) -> Result<DominatingPair> {
    let p = params.normalized();
    check_sigma(p.sigma)?;
    check_rate(p.q)?;
    Ok(DominatingPair { sigma: p.sigma, q: p.q })
}

/// Exact δ(ε) of one iteration of the subsampled Gaussian mechanism:
///
/// ```text
/// δ = q·Pr(Z ≥ σ·ln(h/q) − 1/(2σ)) − h·Pr(Z ≥ σ·ln(h/q) + 1/(2σ)),
/// h = e^ε − (1 − q).
/// ```
pub fn analytic_delta_single_step(sigma: f64, q: f64, epsilon: f64) -> Result<f64> {
    check_sigma(sigma)?;
    check_rate(q)?;
    check_epsilon(epsilon)?;
    if q == 0.0 || epsilon == f64::INFINITY {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok(gaussian_delta(sigma, epsilon));
    }
    let ln_q = q.ln();
    let (ln_h, ln_h_over_q) = if epsilon < 1.0 {
        let em1 = epsilon.exp_m1();
        ((em1 + q).ln(), (em1 / q).ln_1p())
    } else {
        let ln_h = epsilon + ((q - 1.0) * (-epsilon).exp()).ln_1p();
        (ln_h, ln_h - ln_q)
    };
    Ok(delta_from_log_terms(sigma, ln_q, ln_h, ln_h_over_q))
}

/// δ(ε) of the plain Gaussian mechanism with unit sensitivity; the `q = 1`
/// case of [`analytic_delta_single_step`], sharing its code path.
pub fn gaussian_delta(sigma: f64, epsilon: f64) -> f64 {
    if epsilon == f64::INFINITY {
        return 0.0;
    }
    delta_from_log_terms(sigma, 0.0, epsilon, epsilon)
}

/// Hockey-stick divergence `E_Q[(dP/dQ − e^s)_+]` of the dominating pair
/// for any real order `ln α = s`, including negative `s`.
pub(crate) fn hockey_stick_at_loss(sigma: f64, q: f64, s: f64) -> f64 {
    if s == f64::INFINITY {
        return 0.0;
    }
    if q == 0.0 {
        return (-s.exp_m1()).max(0.0);
    }
    if q == 1.0 {
        if s >= 0.0 {
            return gaussian_delta(sigma, s);
        }
        return delta_from_log_terms(sigma, 0.0, s, s);
    }
    if s >= 0.0 {
        return analytic_delta_single_step(sigma, q, s).unwrap_or(f64::NAN);
    }
    let lm = (-q).ln_1p();
    if s <= lm {
        // e^s ≤ 1 − q bounds the likelihood ratio from below: H = 1 − e^s.
        return -s.exp_m1();
    }
    let ln_q = q.ln();
    let ln_h = lm + ln_exp_m1(s - lm);
    delta_from_log_terms(sigma, ln_q, ln_h, ln_h - ln_q)
}

fn delta_from_log_terms(sigma: f64, ln_q: f64, ln_h: f64, ln_h_over_q: f64) -> f64 {
    let x = sigma * ln_h_over_q;
    let half = 0.5 / sigma;
    let first = ln_q + norm_ln_sf(x - half);
    let second = ln_h + norm_ln_sf(x + half);
    if first == f64::NEG_INFINITY || second >= first {
        return 0.0;
    }
    // q·A − h·B = q·A·(1 − hB/(qA))
    let delta = first.exp() * -(second - first).exp_m1();
    delta.clamp(0.0, 1.0)
}

/// Checks that the single-step δ(ε) never increases along a logarithmic ε
/// grid on `[0.01, 10]` (tolerance 1e-12).
pub fn delta_monotonicity_check(sigma: f64, q: f64) -> Result<bool> {
    const POINTS: usize = 256;
    let (lo, hi) = (0.01f64.ln(), 10f64.ln());
    let mut previous = f64::INFINITY;
    for k in 0..POINTS {
        let eps = (lo + (hi - lo) * k as f64 / (POINTS - 1) as f64).exp();
        let delta = analytic_delta_single_step(sigma, q, eps)?;
        if delta > previous + 1e-12 {
            return Ok(false);
        }
        previous = delta;
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validation() {
        assert!(MechanismParams::new(1.0, 0.5, 1.0, 1).is_ok());
        assert!(MechanismParams::new(0.0, 0.5, 1.0, 1).is_err());
        assert!(MechanismParams::new(1.0, 1.5, 1.0, 1).is_err());
        assert!(MechanismParams::new(1.0, 0.5, -1.0, 1).is_err());
        assert!(MechanismParams::new(1.0, 0.5, 1.0, 0).is_err());
        assert!(PrivacyBudget::new(-0.1, 1e-5).is_err());
        assert!(PrivacyBudget::new(1.0, 1.5).is_err());
    }

    #[test]
    fn normalization_scales_sigma() {
        let p = MechanismParams::new(6.0, 0.1, 3.0, 10).unwrap().normalized();
        assert_eq!(p.sigma, 2.0);
        assert_eq!(p.sensitivity, 1.0);
    }

    #[test]
    fn pair_collapses_at_q_zero() {
        let pair = dominating_pair_densities(&MechanismParams::new(1.5, 0.0, 1.0, 1).unwrap()).unwrap();
        for &t in &[-3.0, 0.0, 0.7, 4.0] {
            assert_eq!(pair.p_density(t), pair.q_density(t));
        }
    }

    #[test]
    fn mixture_density_matches_component_evaluation() {
        let pair = DominatingPair { sigma: 2.0, q: 0.5 };
        let n = |t: f64, mu: f64, s: f64| {
            (-(t - mu) * (t - mu) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
        };
        let direct = 0.5 * n(0.0, 1.0, 2.0) + 0.5 * n(0.0, 0.0, 2.0);
        assert!((pair.p_density(0.0) - direct).abs() < 1e-12);
    }

    #[test]
    fn loss_special_cases() {
        let gauss = PrivacyLossFn::new(1.0, 1.0).unwrap();
        assert_eq!(gauss.loss_at(0.5), 0.0);
        assert_eq!(gauss.loss_at(2.0), 1.5);
        let trivial = PrivacyLossFn::new(3.0, 0.0).unwrap();
        assert_eq!(trivial.loss_at(-7.0), 0.0);
        assert_eq!(trivial.loss_at(40.0), 0.0);
    }

    #[test]
    fn loss_is_stable_far_out() {
        let f = PrivacyLossFn::new(0.5, 0.3).unwrap();
        let hi = f.loss_at(25.0);
        assert!(hi.is_finite() && hi > 90.0);
        let lo = f.loss_at(-25.0);
        assert!((lo - f.min_loss()).abs() < 1e-12);
    }

    #[test]
    fn inverse_round_trips() {
        for &(s, q) in &[(1.0, 1.0), (0.5, 0.3), (10.0, 0.001), (2.0, 0.999)] {
            let f = PrivacyLossFn::new(s, q).unwrap();
            for &t in &[-3.0, -0.2, 0.5, 1.0, 4.0, 20.0] {
                let l = f.loss_at(t);
                if l - f.min_loss() < 1e-9 {
                    continue;
                }
                let back = f.inverse(l);
                assert!((back - t).abs() < 1e-7 * (1.0 + t.abs()) * s * s, "s={s} q={q} t={t} back={back}");
            }
        }
        let f = PrivacyLossFn::new(1.0, 0.2).unwrap();
        assert_eq!(f.inverse(f.min_loss()), f64::NEG_INFINITY);
    }

    #[test]
    fn analytic_delta_degenerate_cases() {
        assert_eq!(analytic_delta_single_step(1.0, 0.0, 1.0).unwrap(), 0.0);
        let direct = {
            let (s, e) = (2.0f64, 1.0f64);
            norm_sf(s * e - 0.5 / s) - e.exp() * norm_sf(s * e + 0.5 / s)
        };
        let via = analytic_delta_single_step(2.0, 1.0, 1.0).unwrap();
        assert!((via - direct).abs() < 1e-15);
        assert_eq!(via, gaussian_delta(2.0, 1.0));
    }

    #[test]
    fn analytic_delta_rejects_bad_input() {
        assert!(analytic_delta_single_step(0.0, 0.5, 1.0).is_err());
        assert!(analytic_delta_single_step(1.0, -0.1, 1.0).is_err());
        assert!(analytic_delta_single_step(1.0, 0.5, -1.0).is_err());
    }

    #[test]
    fn analytic_delta_at_large_epsilon_is_tiny_not_nan() {
        let d = analytic_delta_single_step(1.0, 0.5, 800.0).unwrap();
        assert_eq!(d, 0.0);
        let d = analytic_delta_single_step(0.3, 0.5, 30.0).unwrap();
        assert!(d > 0.0 && d < 1e-3, "{d}");
    }

    #[test]
    fn monotone_in_epsilon() {
        for &(s, q) in &[(1.0, 0.1), (5.0, 1.0), (0.5, 0.9)] {
            assert!(delta_monotonicity_check(s, q).unwrap());
        }
    }
}
