//! Noise calibration: the smallest σ meeting an `(ε, δ)` target.

use crate::error::{invalid, Error, Result};
use crate::mechanism::{check_epsilon, gaussian_delta, MechanismParams};
use crate::pld::{accountant_delta, AccountantConfig, Rounding};

/// Default relative width of the final σ bracket.
pub const DEFAULT_REL_TOL: f64 = 1e-4;
const MAX_DOUBLINGS: usize = 200;

/// Outcome of [`calibrate_sigma`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationResult {
    /// Upper end of the final bracket; meets the target.
    pub sigma: f64,
    /// Pessimistic δ at `sigma`.
    pub achieved_delta: f64,
    pub bracket_low: f64,
    pub bracket_high: f64,
    /// Number of accountant evaluations.
    pub evaluations: usize,
    /// `sigma / q`.
    pub sigma_eff: f64,
}

/// σ of the plain Gaussian mechanism (unit sensitivity, one step) with
/// `δ(ε) = delta`, solved on the closed form.
pub fn gaussian_sigma(epsilon: f64, delta: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    check_target(delta)?;
    let (mut lo, mut hi) = (1e-3, 1.0);
    while gaussian_delta(lo, epsilon) <= delta {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::NoConvergence(format!("no σ reaches δ = {delta} at ε = {epsilon}")));
        }
    }
    while gaussian_delta(hi, epsilon) > delta {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::NoConvergence(format!("no σ reaches δ = {delta} at ε = {epsilon}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gaussian_delta(mid, epsilon) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

fn check_target(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        invalid(format!("target delta must lie in (0, 1), got {delta}"))
    }
}

/// Smallest σ (to relative tolerance [`DEFAULT_REL_TOL`]) for which the
/// pessimistic accountant certifies `(ε, δ_target)` after `iterations`
/// steps at sampling rate `q`.
pub fn calibrate_sigma(
    q: f64,
    iterations: u64,
    epsilon: f64,
    delta_target: f64,
    cfg: &AccountantConfig,
) -> Result<CalibrationResult> {
    calibrate_sigma_with_tol(q, iterations, epsilon, delta_target, cfg, DEFAULT_REL_TOL)
}

/// [`calibrate_sigma`] with an explicit relative bracket tolerance.
pub fn calibrate_sigma_with_tol(
    q: f64,
    iterations: u64,
    epsilon: f64,
    delta_target: f64,
    cfg: &AccountantConfig,
    rel_tol: f64,
) -> Result<CalibrationResult> {
    if !(q > 0.0 && q <= 1.0) {
        return invalid(format!("sampling rate must lie in (0, 1], got {q}"));
    }
    if iterations == 0 {
        return invalid("iterations must be at least 1");
    }
    check_epsilon(epsilon)?;
    check_target(delta_target)?;
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return invalid(format!("relative tolerance must lie in (0, 1), got {rel_tol}"));
    }
    cfg.validate()?;
    // As σ → 0 the loss is +∞ unless no step samples the record.
    let ceiling = 1.0 - (1.0 - q).powf(iterations as f64);
    if q < 1.0 && delta_target >= ceiling {
        return Err(Error::NoConvergence(format!(
            "target δ = {delta_target} is not below the ceiling {ceiling} reached as σ → 0"
        )));
    }

    let mut evaluations = 0;
    let mut delta_at = |sigma: f64| -> Result<f64> {
        evaluations += 1;
        let params = MechanismParams::new(sigma, q, 1.0, iterations)?;
        accountant_delta(&params, epsilon, cfg, Rounding::Pessimistic)
    };

    // Very small σ can need more grid points than allowed; start higher.
    let mut start = q * (iterations as f64).sqrt() * gaussian_sigma(epsilon, delta_target)?;
    let mut doublings = 0;
    let start_delta = loop {
        match delta_at(start) {
            Err(Error::GridOverflow { .. }) if doublings < MAX_DOUBLINGS => {
                start *= 2.0;
                doublings += 1;
            }
            other => break other?,
        }
    };
    let (mut lo, mut hi);
    if start_delta <= delta_target {
        hi = start;
        lo = start * 0.5;
        let mut doublings = 0;
        loop {
            match delta_at(lo) {
                Ok(d) if d > delta_target => break,
                Ok(_) => {}
                Err(Error::GridOverflow { .. }) => {
                    return Err(Error::NoConvergence(format!("grid overflow while shrinking σ below {lo}")))
                }
                Err(e) => return Err(e),
            }
            hi = lo;
            lo *= 0.5;
            doublings += 1;
            if doublings >= MAX_DOUBLINGS {
                return Err(Error::NoConvergence(format!("no σ above {lo} violates the target")));
            }
        }
    } else {
        lo = start;
        hi = start * 2.0;
        let mut doublings = 0;
        while delta_at(hi)? > delta_target {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings >= MAX_DOUBLINGS {
                return Err(Error::NoConvergence(format!("δ still above target at σ = {hi}")));
            }
        }
    }

    let mut achieved = f64::NAN;
    while hi - lo > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        let d = delta_at(mid)?;
        if d > delta_target {
            lo = mid;
        } else {
            hi = mid;
            achieved = d;
        }
    }
    if achieved.is_nan() {
        achieved = delta_at(hi)?;
    }
    Ok(CalibrationResult {
        sigma: hi,
        achieved_delta: achieved,
        bracket_low: lo,
        bracket_high: hi,
        evaluations,
        sigma_eff: hi / q,
    })
}

/// `σ(q, T) / (q·σ(1, T))`.
pub fn convergence_ratio(
    q: f64,
    iterations: u64,
    epsilon: f64,
    delta_target: f64,
    cfg: &AccountantConfig,
) -> Result<f64> {
    let sub = calibrate_sigma(q, iterations, epsilon, delta_target, cfg)?;
    let full = calibrate_sigma(1.0, iterations, epsilon, delta_target, cfg)?;
    Ok(sub.sigma / (q * full.sigma))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_sigma_solves_the_closed_form() {
        let s = gaussian_sigma(1.0, 1e-5).unwrap();
        assert!((gaussian_delta(s, 1.0) - 1e-5).abs() < 1e-15);
        assert!(gaussian_sigma(1.0, 0.0).is_err());
    }

    #[test]
    fn single_step_full_batch_matches_closed_form_root() {
        let cfg = AccountantConfig::default();
        let r = calibrate_sigma(1.0, 1, 1.0, 1e-5, &cfg).unwrap();
        let exact = gaussian_sigma(1.0, 1e-5).unwrap();
        assert!((r.sigma / exact - 1.0).abs() < 1e-4, "{} {}", r.sigma, exact);
        assert!(r.achieved_delta <= 1e-5);
        assert!(r.bracket_high - r.bracket_low <= 1e-4 * r.sigma);
        assert_eq!(r.sigma_eff, r.sigma);
    }

    #[test]
    fn more_steps_need_more_noise() {
        let cfg = AccountantConfig::default();
        let a = calibrate_sigma(0.2, 5, 1.0, 1e-5, &cfg).unwrap();
        let b = calibrate_sigma(0.2, 10, 1.0, 1e-5, &cfg).unwrap();
        assert!(b.sigma > a.sigma);
        assert_eq!(a.sigma_eff, a.sigma / 0.2);
    }

    #[test]
    fn unreachable_target_does_not_converge() {
        let cfg = AccountantConfig::default();
        assert!(matches!(calibrate_sigma(0.01, 1, 1.0, 0.02, &cfg), Err(Error::NoConvergence(_))));
        assert!(calibrate_sigma(0.0, 1, 1.0, 1e-5, &cfg).is_err());
    }

    #[test]
    fn full_batch_ratio_is_exactly_one() {
        let cfg = AccountantConfig::default();
        assert_eq!(convergence_ratio(1.0, 3, 1.0, 1e-5, &cfg).unwrap(), 1.0);
    }
}
