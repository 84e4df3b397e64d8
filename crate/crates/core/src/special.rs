//! Error-function family and standard-normal tails, evaluated in the log
//! domain wherever the plain value would underflow or cancel.
//!
//! `erf`/`erfc` themselves come from `libm`; everything here is built on
//! top of those two primitives.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_2_SQRT_PI, LN_2, PI};

/// `ln(sqrt(2π))`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Above this argument `erfc` is computed through the continued fraction
/// for `erfcx`, since `exp(x²)` would overflow.
const ERFCX_CF_THRESHOLD: f64 = 26.0;

#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Derivative of `erf`: `(2/√π)·exp(-x²)`.
#[inline]
pub fn erf_prime(x: f64) -> f64 {
    FRAC_2_SQRT_PI * (-x * x).exp()
}

/// Scaled complementary error function `exp(x²)·erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        // erfc(-y) = 2 - erfc(y)
        let y = -x;
        if y > ERFCX_CF_THRESHOLD {
            return f64::INFINITY;
        }
        return 2.0 * (y * y).exp() - erfcx(y);
    }
    if x < ERFCX_CF_THRESHOLD {
        erfc(x) * (x * x).exp()
    } else {
        erfcx_continued_fraction(x)
    }
}

/// Laplace continued fraction, accurate to machine precision for `x ≥ 26`.
fn erfcx_continued_fraction(x: f64) -> f64 {
    // erfc(x) e^{x²} √π = 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let mut tail = x;
    for k in (1..=40).rev() {
        tail = x + (k as f64 * 0.5) / tail;
    }
    1.0 / (tail * PI.sqrt())
}

/// `ln erfc(x)`, finite for every finite `x`.
pub fn ln_erfc(x: f64) -> f64 {
    if x < ERFCX_CF_THRESHOLD {
        erfc(x).ln()
    } else {
        erfcx_continued_fraction(x).ln() - x * x
    }
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// `ln φ(x)` for the standard normal density.
#[inline]
pub fn norm_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF `Φ(x)`.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal survival function `1 − Φ(x)`, accurate in the far tail.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)`.
pub fn norm_ln_cdf(x: f64) -> f64 {
    if x > 5.0 {
        (-norm_sf(x)).ln_1p()
    } else {
        -LN_2 + ln_erfc(-x * FRAC_1_SQRT_2)
    }
}

/// `ln(1 − Φ(x))`.
#[inline]
pub fn norm_ln_sf(x: f64) -> f64 {
    norm_ln_cdf(-x)
}

/// `Φ(b) − Φ(a)` for `a ≤ b` without subtracting two numbers close to one.
/// Either bound may be infinite.
pub fn norm_interval(a: f64, b: f64) -> f64 {
    debug_assert!(a <= b || a.is_nan() || b.is_nan());
    if a >= b {
        return 0.0;
    }
    let mass = if a >= 0.0 {
        norm_sf(a) - norm_sf(b)
    } else if b <= 0.0 {
        norm_cdf(b) - norm_cdf(a)
    } else {
        1.0 - norm_cdf(a) - norm_sf(b)
    };
    mass.max(0.0)
}

/// Inverse of the standard normal CDF.
///
/// Solves `ln Φ(x) = ln p` by Newton's method. `ln Φ` is concave, so
/// iterates started left of the root increase monotonically towards it.
pub fn norm_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -norm_quantile_lower(1.0 - p);
    }
    norm_quantile_lower(p)
}

/// Quantile of the upper tail: returns `x` with `1 − Φ(x) = p`. Exact for
/// tiny `p`, where `norm_quantile(1 − p)` would lose everything to rounding.
pub fn norm_isf(p: f64) -> f64 {
    -norm_quantile(p)
}

fn norm_quantile_lower(p: f64) -> f64 {
    let target = p.ln();
    // Φ(x) ≤ e^{-x²/2}/2 for x ≤ 0 puts this start left of the root.
    let mut x = -(-2.0 * target).sqrt();
    for _ in 0..200 {
        let ln_cdf = norm_ln_cdf(x);
        let slope = (norm_ln_pdf(x) - ln_cdf).exp();
        let step = (ln_cdf - target) / slope;
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// `ln(1 − e^x)` for `x ≤ 0`.
pub fn ln_one_minus_exp(x: f64) -> f64 {
    if x > -LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `ln(e^a + e^b)`.
pub fn ln_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(e^x − 1)` for `x > 0`.
pub fn ln_exp_m1(x: f64) -> f64 {
    if x > 30.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}
