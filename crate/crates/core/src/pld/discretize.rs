//! Single-iteration discretization.
//!
//! Both roundings start from the same per-bin quantities. Bin `j` covers
//! losses `(s_{j−1}, s_j]`, i.e. `t ∈ (t_{j−1}, t_j]` for the monotone loss
//! `ℓ(t)`, with `P`-mass `Pbin` and `Q`-mass `Qbin`. Writing `r = e^s`, the
//! bin is replaced by two atoms at its edges with `Q`-masses `a` (lower) and
//! `b` (upper) chosen so that both `P`- and `Q`-mass are preserved. This is
//! a mean-preserving spread of the likelihood ratio, so every hockey-stick
//! divergence can only grow: the pessimistic PLD.
//!
//! The split reproduces the hockey-stick curve `H(α)` exactly at the grid
//! points and linearly in between. Lowering the grid values by a bound on
//! the chord error gives a piecewise-linear curve below `H`; its kinks are
//! the optimistic PLD.

use super::{AccountantConfig, DiscretePld, Rounding};
use crate::error::{Error, Result};
use crate::mechanism::{hockey_stick_at_loss, PrivacyLossFn};
use crate::quadrature::gauss_legendre;
use crate::special::{norm_interval, norm_isf, norm_ln_pdf};

/// Bins narrower than this (in units of σ) use Gauss–Legendre for the
/// split; wider ones use CDF differences.
const NARROW_BIN: f64 = 0.05;
const LEGENDRE_POINTS: usize = 8;

/// Discretizes the privacy loss of one iteration onto the grid
/// `k·cfg.grid_step`, truncating at most `cfg.tail_mass_budget` of `P`-mass
/// on each side.
pub fn discretize(loss: &PrivacyLossFn, cfg: &AccountantConfig, rounding: Rounding) -> Result<DiscretePld> {
    cfg.validate()?;
    let h = cfg.grid_step;
    let (sigma, q) = (loss.sigma(), loss.q());
    if q == 0.0 {
        return Ok(DiscretePld {
            origin_index: 0,
            step: h,
            masses: vec![1.0],
            top_tail: 0.0,
            bottom_tail: 0.0,
            rounding,
        });
    }

    // P(t < t_lo) ≤ Φ(t_lo/σ) and P(t > t_hi) ≤ Φc((t_hi − 1)/σ).
    let z = norm_isf(cfg.tail_mass_budget);
    let t_lo = -sigma * z;
    let t_hi = 1.0 + sigma * z;
    let k_lo = (loss.loss_at(t_lo) / h).floor() as i64;
    let k_hi = ((loss.loss_at(t_hi) / h).ceil() as i64).max(k_lo + 1);
    let n = (k_hi - k_lo + 1) as usize;
    if n > cfg.max_grid_points {
        return Err(Error::GridOverflow { required: n, limit: cfg.max_grid_points });
    }

    let bins = Bins::compute(loss, k_lo, n, h);
    let pld = match rounding {
        Rounding::Pessimistic => bins.pessimistic(k_lo, h),
        Rounding::Optimistic => bins.optimistic(sigma, q, k_lo, h),
    };
    Ok(pld)
}

/// Edge split of every bin plus the regions outside the grid.
struct Bins {
    /// `r_k = e^{s_k}`.
    r: Vec<f64>,
    /// `Q`-mass moved to the lower edge of bin `j` (index `j`, `j ≥ 1`).
    lower: Vec<f64>,
    /// `Q`-mass moved to the upper edge of bin `j`.
    upper: Vec<f64>,
    /// `P`-mass of bin `j`.
    p_bin: Vec<f64>,
    q_bin: Vec<f64>,
    p_below: f64,
    q_below: f64,
    p_above: f64,
    q_above: f64,
}

impl Bins {
    fn compute(loss: &PrivacyLossFn, k_lo: i64, n: usize, h: f64) -> Self {
        let (sigma, q) = (loss.sigma(), loss.q());
        let rule = gauss_legendre(LEGENDRE_POINTS);
        let s = |k: usize| (k_lo + k as i64) as f64 * h;
        let r: Vec<f64> = (0..n).map(|k| s(k).exp()).collect();
        let t: Vec<f64> = (0..n).map(|k| loss.inverse(s(k))).collect();

        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut p_bin = vec![0.0; n];
        let mut q_bin = vec![0.0; n];
        for j in 1..n {
            let (t0, t1) = (t[j - 1], t[j]);
            let mass0 = norm_interval(t0 / sigma, t1 / sigma);
            let mass1 = norm_interval((t0 - 1.0) / sigma, (t1 - 1.0) / sigma);
            let qb = mass0;
            let pb = q * mass1 + (1.0 - q) * mass0;
            // D = Pbin − r_{j−1}·Qbin = ∫_bin (e^{ℓ(t)} − e^{ℓ(t_{j−1})}) dQ
            let d = if t0.is_finite() && t1 - t0 <= NARROW_BIN * sigma {
                let u0 = loss.gaussian_exponent(t0);
                let (mid, half) = (0.5 * (t0 + t1), 0.5 * (t1 - t0));
                let mut acc = 0.0;
                for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                    let tt = mid + half * x;
                    let du = loss.gaussian_exponent(tt) - u0;
                    acc += w * (norm_ln_pdf(tt / sigma) - sigma.ln() + u0).exp() * du.exp_m1();
                }
                q * half * acc
            } else {
                q * mass1 + ((1.0 - q) - r[j - 1]) * mass0
            };
            let dr = r[j - 1] * h.exp_m1();
            let b = (d / dr).clamp(0.0, qb);
            lower[j] = qb - b;
            upper[j] = b;
            p_bin[j] = pb;
            q_bin[j] = qb;
        }
        let z_lo = t[0] / sigma;
        let z_hi = t[n - 1] / sigma;
        let q_below = norm_interval(f64::NEG_INFINITY, z_lo);
        let p_below = q * norm_interval(f64::NEG_INFINITY, z_lo - 1.0 / sigma) + (1.0 - q) * q_below;
        let q_above = norm_interval(z_hi, f64::INFINITY);
        let p_above = q * norm_interval(z_hi - 1.0 / sigma, f64::INFINITY) + (1.0 - q) * q_above;
        Self { r, lower, upper, p_bin, q_bin, p_below, q_below, p_above, q_above }
    }

    fn pessimistic(&self, k_lo: i64, h: f64) -> DiscretePld {
        let n = self.r.len();
        let mut masses = vec![0.0; n];
        for j in 1..n {
            let top = (self.upper[j] * self.r[j]).min(self.p_bin[j]);
            masses[j] += top;
            masses[j - 1] += self.p_bin[j] - top;
        }
        DiscretePld {
            origin_index: k_lo,
            step: h,
            masses,
            top_tail: self.p_above,
            bottom_tail: self.p_below,
            rounding: Rounding::Pessimistic,
        }
    }

    fn optimistic(&self, sigma: f64, q: f64, k_lo: i64, h: f64) -> DiscretePld {
        let n = self.r.len();
        let r = &self.r;
        let dr: Vec<f64> = (0..n).map(|j| if j == 0 { 0.0 } else { r[j] - r[j - 1] }).collect();
        // chord error bound of bin j: Δr_j·Qbin_j/4
        let g: Vec<f64> = (0..n).map(|j| if j == 0 { 0.0 } else { dr[j] * self.q_bin[j] / 4.0 }).collect();
        let mut e = vec![0.0; n];
        for i in 0..n {
            e[i] = if i == 0 {
                g[1].max(r[0] * self.q_below)
            } else if i == n - 1 {
                hockey_stick_at_loss(sigma, q, (k_lo + i as i64) as f64 * h)
            } else {
                g[i].max(g[i + 1])
            };
        }
        let c: Vec<f64> = (0..n).map(|j| if j == 0 { 0.0 } else { (e[j - 1] - e[j]) / dr[j] }).collect();

        let mut qm = vec![0.0; n];
        for i in 0..n {
            qm[i] = if i == 0 {
                self.q_below + self.lower[1] + c[1]
            } else if i == n - 1 {
                self.q_above + self.upper[i] - c[i]
            } else {
                self.lower[i + 1] + self.upper[i] + c[i + 1] - c[i]
            };
        }
        remove_concave_kinks(r, &mut qm);

        let masses: Vec<f64> = qm.iter().zip(r).map(|(&m, &ri)| m * ri).collect();
        let kept: f64 = masses.iter().sum();
        DiscretePld {
            origin_index: k_lo,
            step: h,
            masses,
            top_tail: 0.0,
            bottom_tail: (1.0 - kept).max(0.0),
            rounding: Rounding::Optimistic,
        }
    }
}

/// Removes atoms with negative `Q`-mass by spreading them onto the nearest
/// surviving neighbours with weights that keep the `P`-mass. Each removal
/// replaces the curve by its chord across the removed kink, which can only
/// lower it. The left neighbour of atom 0 is a virtual atom at `r = 0`;
/// a negative atom at the right end is clamped.
fn remove_concave_kinks(r: &[f64], qm: &mut [f64]) {
    let n = qm.len();
    let mut prev: Vec<Option<usize>> = (0..n).map(|i| i.checked_sub(1)).collect();
    let mut next: Vec<Option<usize>> = (0..n).map(|i| if i + 1 < n { Some(i + 1) } else { None }).collect();
    let mut pending: Vec<usize> = (0..n).filter(|&i| qm[i] < 0.0).collect();
    while let Some(i) = pending.pop() {
        if qm[i] >= 0.0 {
            continue;
        }
        let Some(right) = next[i] else {
            qm[i] = 0.0;
            continue;
        };
        let left_r = prev[i].map_or(0.0, |l| r[l]);
        let w_left = (r[right] - r[i]) / (r[right] - left_r);
        let mass = qm[i];
        qm[i] = 0.0;
        qm[right] += (1.0 - w_left) * mass;
        if qm[right] < 0.0 {
            pending.push(right);
        }
        if let Some(l) = prev[i] {
            qm[l] += w_left * mass;
            if qm[l] < 0.0 {
                pending.push(l);
            }
            next[l] = Some(right);
        }
        prev[right] = prev[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::analytic_delta_single_step;
    use crate::pld::delta_from_pld;

    fn cfg(step: f64) -> AccountantConfig {
        AccountantConfig::with_grid_step(step)
    }

    #[test]
    fn q_zero_is_a_point_mass_at_zero() {
        let f = PrivacyLossFn::new(1.0, 0.0).unwrap();
        let pld = discretize(&f, &cfg(1e-4), Rounding::Pessimistic).unwrap();
        assert_eq!(pld.masses(), &[1.0]);
        assert_eq!(pld.grid_origin(), 0.0);
    }

    #[test]
    fn total_mass_is_one() {
        for rounding in [Rounding::Pessimistic, Rounding::Optimistic] {
            for &(s, q) in &[(2.0, 0.2), (0.5, 1.0), (5.0, 0.001), (0.7, 0.9)] {
                let f = PrivacyLossFn::new(s, q).unwrap();
                let pld = discretize(&f, &cfg(1e-4), rounding).unwrap();
                assert!((pld.total_mass() - 1.0).abs() < 1e-12, "{rounding} s={s} q={q}: {}", pld.total_mass());
                assert!(pld.masses().iter().all(|&m| m >= 0.0));
            }
        }
    }

    #[test]
    fn gaussian_loss_mean() {
        let f = PrivacyLossFn::new(1.0, 1.0).unwrap();
        let pld = discretize(&f, &cfg(1e-4), Rounding::Pessimistic).unwrap();
        let (mean, var) = pld.moments();
        assert!((mean - 0.5).abs() < 1e-4, "{mean}");
        assert!((var - 1.0).abs() < 1e-4, "{var}");
    }

    #[test]
    fn brackets_the_analytic_delta() {
        for &(s, q) in &[(2.0, 0.2), (0.6, 1.0), (1.0, 0.01), (0.5, 0.5)] {
            let f = PrivacyLossFn::new(s, q).unwrap();
            let hi = discretize(&f, &cfg(1e-4), Rounding::Pessimistic).unwrap();
            let lo = discretize(&f, &cfg(1e-4), Rounding::Optimistic).unwrap();
            for &eps in &[0.0, 0.1, 1.0, 3.0] {
                let exact = analytic_delta_single_step(s, q, eps).unwrap();
                let up = delta_from_pld(&hi, eps).unwrap();
                let down = delta_from_pld(&lo, eps).unwrap();
                // at grid-aligned ε the pessimistic value is exact up to rounding
                let slack = 1e-13 * exact;
                assert!(up >= exact - slack && exact >= down - slack, "s={s} q={q} eps={eps}: {down} {exact} {up}");
                assert!(up - down < 1e-7, "gap {}", up - down);
            }
        }
    }

    #[test]
    fn gap_shrinks_with_the_step() {
        let f = PrivacyLossFn::new(0.8, 0.3).unwrap();
        let gap = |h: f64| {
            let up = delta_from_pld(&discretize(&f, &cfg(h), Rounding::Pessimistic).unwrap(), 0.5).unwrap();
            let down = delta_from_pld(&discretize(&f, &cfg(h), Rounding::Optimistic).unwrap(), 0.5).unwrap();
            up - down
        };
        let (coarse, fine) = (gap(1e-2), gap(5e-3));
        assert!(fine <= 0.5 * coarse, "{coarse} {fine}");
    }

    #[test]
    fn overflow_is_reported() {
        let f = PrivacyLossFn::new(0.5, 1.0).unwrap();
        let tight = AccountantConfig { max_grid_points: 1000, ..cfg(1e-4) };
        assert!(matches!(discretize(&f, &tight, Rounding::Pessimistic), Err(Error::GridOverflow { .. })));
    }

    #[test]
    fn kink_removal_preserves_p_mass() {
        let r = [0.5, 1.0, 2.0, 4.0];
        let mut qm = [0.2, -0.05, 0.5, 0.35];
        let p_before: f64 = qm.iter().zip(&r).map(|(a, b)| a * b).sum();
        remove_concave_kinks(&r, &mut qm);
        let p_after: f64 = qm.iter().zip(&r).map(|(a, b)| a * b).sum();
        assert!(qm.iter().all(|&m| m >= 0.0));
        assert!((p_before - p_after).abs() < 1e-15);
    }
}
