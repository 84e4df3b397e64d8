//! Numerical integration: adaptive Gauss–Kronrod (7/15) plus fixed
//! Gauss–Legendre and Gauss–Hermite rules.

#![allow(clippy::excessive_precision)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

/// Gauss weights for the odd-indexed Kronrod nodes.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Settings for [`integrate`].
#[derive(Clone, Copy, Debug)]
pub struct QuadratureOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subintervals: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { abs_tol: 1e-14, rel_tol: 1e-12, max_subintervals: 4096 }
    }
}

/// Result of an adaptive integration.
#[derive(Clone, Copy, Debug)]
pub struct Integral {
    pub value: f64,
    pub error_estimate: f64,
    pub subintervals: usize,
}

#[derive(Clone, Copy, Debug)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (j, (&x, &w)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        let sum = f(center - half * x) + f(center + half * x);
        kronrod += w * sum;
        if j % 2 == 1 {
            gauss += WG[j / 2] * sum;
        }
    }
    Panel { a, b, value: kronrod * half, error: ((kronrod - gauss) * half).abs() }
}

/// Globally adaptive integration of `f` over the finite interval `[a, b]`.
///
/// The panel with the largest error estimate is bisected until the summed
/// estimate drops below `max(abs_tol, rel_tol·|value|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadratureOptions) -> Result<Integral> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidParameter(format!("integration bounds must be finite, got [{a}, {b}]")));
    }
    if a == b {
        return Ok(Integral { value: 0.0, error_estimate: 0.0, subintervals: 0 });
    }
    let mut heap = BinaryHeap::new();
    let first = kronrod_panel(&f, a, b);
    let (mut value, mut error) = (first.value, first.error);
    heap.push(first);
    loop {
        let tolerance = opts.abs_tol.max(opts.rel_tol * value.abs());
        if error <= tolerance {
            return Ok(Integral { value, error_estimate: error, subintervals: heap.len() });
        }
        if heap.len() >= opts.max_subintervals {
            return Err(Error::QuadratureFailure { achieved: error, requested: tolerance });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval exhausted at machine resolution.
            return Err(Error::QuadratureFailure { achieved: error, requested: tolerance });
        }
        let left = kronrod_panel(&f, worst.a, mid);
        let right = kronrod_panel(&f, mid, worst.b);
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        // Running sums drift; refresh them from the panels now and then.
        if heap.len() % 64 == 0 {
            value = heap.iter().map(|p| p.value).sum();
            error = heap.iter().map(|p| p.error).sum();
        }
    }
}

/// Expectation of `g(X)` for `X ~ N(0, 1)` by adaptive quadrature on
/// `[-bound, bound]`.
pub fn expect_std_normal<F: Fn(f64) -> f64>(g: F, bound: f64, opts: QuadratureOptions) -> Result<Integral> {
    integrate(|x| g(x) * crate::special::norm_pdf(x), -bound, bound, opts)
}

/// Nodes and weights of an n-point rule.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// n-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Rule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp;
        loop {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z_prev = z;
            z = z_prev - p1 / dp;
            if (z - z_prev).abs() <= 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

/// n-point Gauss–Hermite rule for the weight `exp(-x²)`.
///
/// Golub–Welsch: nodes are the eigenvalues of the Jacobi matrix of the
/// Hermite recurrence, weights come from the first eigenvector components.
pub fn gauss_hermite(n: usize) -> Rule {
    let mut diag = vec![0.0; n];
    let mut off: Vec<f64> = (1..=n).map(|k| if k < n { (k as f64 / 2.0).sqrt() } else { 0.0 }).collect();
    let mut first = vec![0.0; n];
    if n > 0 {
        first[0] = 1.0;
    }
    symmetric_tridiagonal_ql(&mut diag, &mut off, &mut first);
    let mut pairs: Vec<(f64, f64)> = diag.iter().zip(&first).map(|(&x, &v)| (x, PI.sqrt() * v * v)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Rule { nodes: pairs.iter().map(|p| p.0).collect(), weights: pairs.iter().map(|p| p.1).collect() }
}

/// Implicit QL iteration on a symmetric tridiagonal matrix. `diag` receives
/// the eigenvalues; `first` (initially the first unit row) receives the
/// first component of each eigenvector.
fn symmetric_tridiagonal_ql(diag: &mut [f64], off: &mut [f64], first: &mut [f64]) {
    let n = diag.len();
    for l in 0..n {
        for _ in 0..60 {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            for i in (l..m).rev() {
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                let f = first[i + 1];
                first[i + 1] = s * first[i] + c * f;
                first[i] = c * first[i] - s * f;
            }
            if deflated {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
}

/// Expectation under `N(0, 1)` with an n-point Gauss–Hermite rule.
pub fn gauss_hermite_expectation<F: Fn(f64) -> f64>(rule: &Rule, g: F) -> f64 {
    let scale = 1.0 / PI.sqrt();
    rule.nodes.iter().zip(&rule.weights).map(|(&y, &w)| w * g(SQRT_2 * y)).sum::<f64>() * scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_integrates_smooth_functions() {
        let r = integrate(|x| x.sin(), 0.0, PI, QuadratureOptions::default()).unwrap();
        assert!((r.value - 2.0).abs() < 1e-14);
        let r = integrate(|x| (-x * x).exp(), -10.0, 10.0, QuadratureOptions::default()).unwrap();
        assert!((r.value - PI.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn kronrod_adapts_to_a_peak() {
        let opts = QuadratureOptions { abs_tol: 1e-13, rel_tol: 1e-13, max_subintervals: 10_000 };
        let r = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, opts).unwrap();
        let exact = 2.0 / 1e-2 * (1.0f64 / 1e-2).atan();
        assert!((r.value / exact - 1.0).abs() < 1e-12);
        assert!(r.subintervals > 1);
    }

    #[test]
    fn kronrod_reports_unreachable_tolerance() {
        let opts = QuadratureOptions { abs_tol: 0.0, rel_tol: 0.0, max_subintervals: 8 };
        assert!(matches!(integrate(|x| x.abs().sqrt(), -1.0, 1.0, opts), Err(Error::QuadratureFailure { .. })));
    }

    #[test]
    fn legendre_is_exact_for_polynomials() {
        let rule = gauss_legendre(8);
        let weight_sum: f64 = rule.weights.iter().sum();
        assert!((weight_sum - 2.0).abs() < 1e-14);
        // ∫ x^14 over [-1,1] = 2/15
        let v: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(14)).sum();
        assert!((v - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_reproduces_normal_moments() {
        let rule = gauss_hermite(200);
        let m0 = gauss_hermite_expectation(&rule, |_| 1.0);
        let m2 = gauss_hermite_expectation(&rule, |x| x * x);
        let m4 = gauss_hermite_expectation(&rule, |x| x.powi(4));
        // largest node and central weight from an independent reference rule
        assert!((rule.nodes[199] - 19.339_248_667_911_406).abs() < 1e-11);
        assert!((rule.weights[100] - 0.155_922_242_330_101_5).abs() < 1e-13);
        assert!((m0 - 1.0).abs() < 1e-13);
        assert!((m2 - 1.0).abs() < 1e-12);
        assert!((m4 - 3.0).abs() < 1e-11);
        let cos = gauss_hermite_expectation(&rule, f64::cos);
        assert!((cos - (-0.5f64).exp()).abs() < 1e-13);
    }
}
