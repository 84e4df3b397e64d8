//! One-iteration analysis: the `a`, `b` quantities, the closed-form
//! derivative of the calibrated σ with respect to `q`, and the grid sweep
//! over `(q, σ)` for the sign of `a − b`.
//!
//! With `h = e^ε − (1 − q)`:
//!
//! ```text
//! a = 1/(2√2·σ),    b = (σ/√2)·ln(h/q)
//! ```

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use crate::calibrate::gaussian_sigma;
use crate::error::{invalid, Error, Result};
use crate::mechanism::{analytic_delta_single_step, check_epsilon, check_sigma};
use crate::special::{erf, erf_prime, erfcx};

/// Above this `a − b` the erf ratio is evaluated in the log domain.
const RATIO_SWITCH: f64 = 6.0;

/// `a` and `b` at one `(σ, q, ε)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbPair {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub epsilon: f64,
    pub sigma: f64,
}

impl AbPair {
    pub fn a_minus_b(&self) -> f64 {
        self.a - self.b
    }
}

/// `ln(h/q)` with `h = e^ε − (1 − q)`, without cancellation for small ε.
pub fn ln_h_over_q(q: f64, epsilon: f64) -> f64 {
    if epsilon < 1.0 {
        (epsilon.exp_m1() / q).ln_1p()
    } else {
        epsilon + ((q - 1.0) * (-epsilon).exp()).ln_1p() - q.ln()
    }
}

pub fn compute_ab(sigma: f64, q: f64, epsilon: f64) -> Result<AbPair> {
    check_sigma(sigma)?;
    check_epsilon(epsilon)?;
    if !(q > 0.0 && q <= 1.0) {
        return invalid(format!("sampling rate must lie in (0, 1], got {q}"));
    }
    let a = 1.0 / (2.0 * SQRT_2 * sigma);
    let b = sigma / SQRT_2 * ln_h_over_q(q, epsilon);
    Ok(AbPair { a, b, q, epsilon, sigma })
}

/// `(erf(a − b) − erf(−a − b)) / erf′(a − b)`.
fn erf_ratio(a: f64, b: f64) -> f64 {
    let x = a - b;
    let half_sqrt_pi = 0.5 * PI.sqrt();
    if x < 0.0 {
        // erf(x) + erf(a+b) = erfc(b−a) − erfc(a+b) loses nothing to
        // cancellation; dividing by (2/√π)e^{−x²} turns both into erfcx.
        half_sqrt_pi * (erfcx(b - a) - erfcx(a + b) * (-4.0 * a * b).exp())
    } else if x <= RATIO_SWITCH {
        (erf(x) + erf(a + b)) / erf_prime(x)
    } else {
        ((erf(x) + erf(a + b)).ln() + x * x).exp() * half_sqrt_pi
    }
}

/// dσ/dq for the σ(q) that makes the single-step δ equal a fixed target,
/// evaluated at that σ.
pub fn sigma_prime(sigma: f64, q: f64, epsilon: f64) -> Result<f64> {
    let ab = compute_ab(sigma, q, epsilon)?;
    Ok(sigma / q / (2.0 * ab.a) * erf_ratio(ab.a, ab.b))
}

/// What the sign test on `a − b` certifies about `σ(q)/q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SigmaEffTrend {
    /// `a < b`: `σ(q)/q` is decreasing in `q` at this point.
    Decreasing,
    /// `a ≥ b`: the sufficient condition does not apply.
    Inconclusive,
}

pub fn effective_sigma_derivative_sign(sigma: f64, q: f64, epsilon: f64) -> Result<SigmaEffTrend> {
    let ab = compute_ab(sigma, q, epsilon)?;
    Ok(if ab.a < ab.b { SigmaEffTrend::Decreasing } else { SigmaEffTrend::Inconclusive })
}

/// Grid settings for [`conjecture_sweep`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConjectureSweepConfig {
    pub delta_target: f64,
    pub epsilons: Vec<f64>,
    pub q_points: usize,
    pub sigma_points: usize,
    /// Lower end of the `q` grid; `4·delta_target` when `None`.
    pub q_min: Option<f64>,
}

impl ConjectureSweepConfig {
    pub const DEFAULT_EPSILON_RANGE: (f64, f64) = (4e-5, 4.0);
    pub const DEFAULT_EPSILON_POINTS: usize = 64;
    pub const DEFAULT_Q_POINTS: usize = 512;
    pub const DEFAULT_SIGMA_POINTS: usize = 1 << 16;

    /// Geometric ε grid over `[min, max]`.
    pub fn with_epsilon_range(delta_target: f64, min: f64, max: f64, points: usize) -> Self {
        Self {
            delta_target,
            epsilons: geometric_grid(min, max, points),
            q_points: Self::DEFAULT_Q_POINTS,
            sigma_points: Self::DEFAULT_SIGMA_POINTS,
            q_min: None,
        }
    }
}

impl Default for ConjectureSweepConfig {
    fn default() -> Self {
        let (lo, hi) = Self::DEFAULT_EPSILON_RANGE;
        Self::with_epsilon_range(1e-5, lo, hi, Self::DEFAULT_EPSILON_POINTS)
    }
}

/// `points` values from `lo` to `hi` (inclusive) with constant ratio.
pub fn geometric_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (l, r) = (lo.ln(), hi.ln());
            (0..points)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i + 1 == points {
                        hi
                    } else {
                        (l + (r - l) * i as f64 / (points - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// Feasible cell maximizing `a − b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConjectureCell {
    pub a_minus_b: f64,
    pub q: f64,
    pub sigma: f64,
    /// Single-step δ at `(sigma, q, ε)`, at most the target.
    pub delta: f64,
}

/// Result for one ε. `best` is `None` when no cell meets the target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConjectureRow {
    pub epsilon: f64,
    pub best: Option<ConjectureCell>,
}

impl ConjectureRow {
    pub fn require(&self) -> Result<ConjectureCell> {
        self.best.ok_or(Error::EmptyFeasibleSet { epsilon: self.epsilon })
    }
}

struct Grids {
    qs: Vec<f64>,
    sigmas: Vec<f64>,
}

fn grids_for(cfg: &ConjectureSweepConfig, epsilon: f64) -> Result<Grids> {
    let q_min = cfg.q_min.unwrap_or(4.0 * cfg.delta_target);
    let sigma_top = gaussian_sigma(epsilon, cfg.delta_target)?;
    Ok(Grids {
        qs: geometric_grid(q_min, 1.0, cfg.q_points),
        sigmas: geometric_grid(q_min * sigma_top, sigma_top, cfg.sigma_points),
    })
}

fn validate(cfg: &ConjectureSweepConfig) -> Result<()> {
    if !(cfg.delta_target > 0.0 && cfg.delta_target < 1.0) {
        return invalid(format!("delta target must lie in (0, 1), got {}", cfg.delta_target));
    }
    if cfg.epsilons.is_empty() || cfg.q_points == 0 || cfg.sigma_points == 0 {
        return invalid("sweep grids must be nonempty");
    }
    if let Some(q_min) = cfg.q_min {
        if !(q_min > 0.0 && q_min <= 1.0) {
            return invalid(format!("q_min must lie in (0, 1], got {q_min}"));
        }
        if q_min < 4.0 * cfg.delta_target {
            eprintln!(
                "warning: q_min = {q_min:e} is below 4·delta_target = {:e}; cells with q close to δ are included",
                4.0 * cfg.delta_target
            );
        }
    }
    for &e in &cfg.epsilons {
        check_epsilon(e)?;
    }
    Ok(())
}

fn cell(sigma: f64, q: f64, epsilon: f64, delta: f64) -> Result<ConjectureCell> {
    Ok(ConjectureCell { a_minus_b: compute_ab(sigma, q, epsilon)?.a_minus_b(), q, sigma, delta })
}

fn keep_max(best: &mut Option<ConjectureCell>, candidate: ConjectureCell) {
    if best.is_none_or(|b| candidate.a_minus_b > b.a_minus_b) {
        *best = Some(candidate);
    }
}

/// For every ε, the largest `a − b` over grid cells `(q, σ)` whose
/// single-step δ is at most the target.
///
/// `q` runs geometrically over `[q_min, 1]` and σ geometrically over
/// `[q_min·σ₁, σ₁]`, where σ₁ solves the full-batch single-step problem.
/// Since δ and `a − b` both decrease in σ, the best cell for each `q` is
/// the smallest feasible σ, found by binary search.
pub fn conjecture_sweep(cfg: &ConjectureSweepConfig) -> Result<Vec<ConjectureRow>> {
    validate(cfg)?;
    let mut rows = Vec::with_capacity(cfg.epsilons.len());
    for &epsilon in &cfg.epsilons {
        let grids = grids_for(cfg, epsilon)?;
        let mut best = None;
        for &q in &grids.qs {
            let feasible = |k: usize| -> Result<Option<f64>> {
                let d = analytic_delta_single_step(grids.sigmas[k], q, epsilon)?;
                Ok((d <= cfg.delta_target).then_some(d))
            };
            let last = grids.sigmas.len() - 1;
            let Some(mut found) = feasible(last)? else { continue };
            let (mut lo, mut hi) = (None::<usize>, last);
            // invariant: hi feasible, every index ≤ lo infeasible
            if let Some(d) = feasible(0)? {
                hi = 0;
                found = d;
            } else {
                lo = Some(0);
            }
            while let Some(l) = lo {
                if hi - l <= 1 {
                    break;
                }
                let mid = l + (hi - l) / 2;
                match feasible(mid)? {
                    Some(d) => {
                        hi = mid;
                        found = d;
                    }
                    None => lo = Some(mid),
                }
            }
            keep_max(&mut best, cell(grids.sigmas[hi], q, epsilon, found)?);
        }
        rows.push(ConjectureRow { epsilon, best });
    }
    Ok(rows)
}

/// Same result as [`conjecture_sweep`] by visiting every grid cell.
pub fn conjecture_sweep_exhaustive(cfg: &ConjectureSweepConfig) -> Result<Vec<ConjectureRow>> {
    validate(cfg)?;
    let mut rows = Vec::with_capacity(cfg.epsilons.len());
    for &epsilon in &cfg.epsilons {
        let grids = grids_for(cfg, epsilon)?;
        let mut best = None;
        for &q in &grids.qs {
            for &sigma in &grids.sigmas {
                let d = analytic_delta_single_step(sigma, q, epsilon)?;
                if d <= cfg.delta_target {
                    keep_max(&mut best, cell(sigma, q, epsilon, d)?);
                }
            }
        }
        rows.push(ConjectureRow { epsilon, best });
    }
    Ok(rows)
}

/// CSV with columns `epsilon,max_a_minus_b,argmax_q,argmax_sigma,achieved_delta`.
/// Rows without a feasible cell carry `NaN` in the last four columns.
pub fn write_conjecture_csv<W: Write>(rows: &[ConjectureRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epsilon,max_a_minus_b,argmax_q,argmax_sigma,achieved_delta")?;
    for row in rows {
        match row.best {
            Some(c) => writeln!(
                out,
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                row.epsilon, c.a_minus_b, c.q, c.sigma, c.delta
            )?,
            None => writeln!(out, "{:.12e},NaN,NaN,NaN,NaN", row.epsilon)?,
        }
    }
    Ok(())
}
