//! Composition by convolution.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{AccountantConfig, DiscretePld, Rounding};
use crate::error::{invalid, Error, Result};

/// Below this many output bins the direct O(n·m) sum is used.
const DIRECT_LIMIT: usize = 64;
/// Mass lost or gained by clamping negative FFT noise that is silently
/// renormalized away.
const MAX_DRIFT: f64 = 1e-9;

/// PLD of `T` independent copies of `pld`, by repeated squaring. Each
/// convolution may drop `cfg.tail_mass_budget / (4·#convolutions)` on each
/// side; the dropped mass moves in the pessimistic or optimistic direction
/// according to `pld.rounding()`.
pub fn self_compose(pld: &DiscretePld, t: u64, cfg: &AccountantConfig) -> Result<DiscretePld> {
    cfg.validate()?;
    if t == 0 {
        return invalid("number of compositions must be at least 1");
    }
    if t == 1 {
        return Ok(pld.clone());
    }
    let convolutions = (63 - t.leading_zeros()) + t.count_ones() - 1;
    let budget = cfg.tail_mass_budget / (4.0 * convolutions as f64);

    let mut result: Option<DiscretePld> = None;
    let mut base = pld.clone();
    let mut remaining = t;
    loop {
        if remaining & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(acc) => convolve(&acc, &base, budget, cfg.max_grid_points)?,
            });
        }
        remaining >>= 1;
        if remaining == 0 {
            break;
        }
        base = convolve(&base, &base, budget, cfg.max_grid_points)?;
    }
    Ok(result.expect("t ≥ 1"))
}

/// PLD of the sum of two independent losses, truncated by at most
/// `tail_budget` per side.
pub fn convolve(a: &DiscretePld, b: &DiscretePld, tail_budget: f64, max_grid_points: usize) -> Result<DiscretePld> {
    if a.step != b.step || a.rounding != b.rounding {
        return invalid("convolved PLDs must share grid step and rounding");
    }
    let len = a.masses.len() + b.masses.len() - 1;
    if len > max_grid_points {
        return Err(Error::GridOverflow { required: len, limit: max_grid_points });
    }
    let mut masses = if a.masses.len().min(b.masses.len()) <= DIRECT_LIMIT || len <= DIRECT_LIMIT {
        direct(&a.masses, &b.masses)
    } else {
        fft(&a.masses, &b.masses, std::ptr::eq(a, b))
    };
    let expected = a.masses.iter().sum::<f64>() * b.masses.iter().sum::<f64>();
    clean_negative_mass(&mut masses, expected)?;

    let (top_tail, bottom_tail) = match a.rounding {
        Rounding::Pessimistic => {
            // any pair touching a tail goes to +∞
            let a_in = 1.0 - a.top_tail - a.bottom_tail;
            let b_in = 1.0 - b.top_tail - b.bottom_tail;
            (1.0 - a_in * b_in, 0.0)
        }
        Rounding::Optimistic => (0.0, 1.0 - (1.0 - a.bottom_tail) * (1.0 - b.bottom_tail)),
    };
    let mut out = DiscretePld {
        origin_index: a.origin_index + b.origin_index,
        step: a.step,
        masses,
        top_tail,
        bottom_tail,
        rounding: a.rounding,
    };
    truncate(&mut out, tail_budget);
    Ok(out)
}

fn direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn fft(a: &[f64], b: &[f64], same: bool) -> Vec<f64> {
    let len = a.len() + b.len() - 1;
    let size = len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);
    let pad = |v: &[f64]| {
        let mut buf = vec![Complex::new(0.0, 0.0); size];
        for (slot, &x) in buf.iter_mut().zip(v) {
            slot.re = x;
        }
        buf
    };
    let mut fa = pad(a);
    forward.process(&mut fa);
    if same {
        for z in fa.iter_mut() {
            *z = *z * *z;
        }
    } else {
        let mut fb = pad(b);
        forward.process(&mut fb);
        for (x, y) in fa.iter_mut().zip(&fb) {
            *x *= *y;
        }
    }
    inverse.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa[..len].iter().map(|z| z.re * scale).collect()
}

/// Clamps negative round-off to zero and rescales to the expected total.
fn clean_negative_mass(masses: &mut [f64], expected: f64) -> Result<()> {
    for m in masses.iter_mut() {
        if *m < 0.0 {
            *m = 0.0;
        }
    }
    let total: f64 = masses.iter().sum();
    let drift = total - expected;
    if drift.abs() > MAX_DRIFT {
        return Err(Error::MassDrift { drift });
    }
    if total > 0.0 {
        let scale = expected / total;
        for m in masses.iter_mut() {
            *m *= scale;
        }
    }
    Ok(())
}

/// Drops up to `budget` of mass from each end of the grid.
fn truncate(pld: &mut DiscretePld, budget: f64) {
    let n = pld.masses.len();
    let mut lo = 0;
    let mut dropped_lo = 0.0;
    while lo + 1 < n && dropped_lo + pld.masses[lo] <= budget {
        dropped_lo += pld.masses[lo];
        lo += 1;
    }
    let mut hi = n;
    let mut dropped_hi = 0.0;
    while hi > lo + 1 && dropped_hi + pld.masses[hi - 1] <= budget {
        dropped_hi += pld.masses[hi - 1];
        hi -= 1;
    }
    if lo == 0 && hi == n {
        return;
    }
    let mut kept = pld.masses[lo..hi].to_vec();
    match pld.rounding {
        Rounding::Pessimistic => {
            kept[0] += dropped_lo;
            pld.top_tail += dropped_hi;
        }
        Rounding::Optimistic => {
            let last = kept.len() - 1;
            kept[last] += dropped_hi;
            pld.bottom_tail += dropped_lo;
        }
    }
    pld.masses = kept;
    pld.origin_index += lo as i64;
}
