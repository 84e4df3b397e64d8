//! Variance of the noisy, subsampled gradient sum used by DP-SGD.
//!
//! With clipped per-example gradients `g̃_i`, inclusion indicators
//! `b_i ~ Bernoulli(q)` and `η ~ N(0, I)`, the estimator
//! `(1/q)·(Σ b_i·g̃_i + σC·η)` is unbiased for `Σ g̃_i`, and its per-coordinate
//! variance splits into `((1 − q)/q)·Σ g̃²_{i,j}` from subsampling and
//! `(σC/q)²` from the privacy noise.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};

/// Minimum number of simulated draws.
pub const MIN_SAMPLES: u64 = 10_000;
/// Draws per independently seeded stream.
const CHUNK: u64 = 1 << 16;

/// `v·min(1, C/‖v‖)`.
pub fn clip(v: &[f64], c: f64) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= c || norm == 0.0 {
        return v.to_vec();
    }
    let scale = c / norm;
    v.iter().map(|x| x * scale).collect()
}

/// Per-example gradients with a clipping threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    vectors: Vec<Vec<f64>>,
    clip_threshold: f64,
    clipped: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn new(vectors: Vec<Vec<f64>>, clip_threshold: f64) -> Result<Self> {
        if !(clip_threshold > 0.0 && clip_threshold.is_finite()) {
            return invalid(format!("clip threshold must be positive, got {clip_threshold}"));
        }
        if let Some(first) = vectors.first() {
            if vectors.iter().any(|v| v.len() != first.len()) {
                return invalid("all gradients must have the same dimension");
            }
        }
        if vectors.iter().flatten().any(|x| !x.is_finite()) {
            return invalid("gradients must be finite");
        }
        let clipped = vectors.iter().map(|v| clip(v, clip_threshold)).collect();
        Ok(Self { vectors, clip_threshold, clipped })
    }

    /// `n` gradients of dimension `dim` with i.i.d. `N(0, scale²)` entries.
    pub fn synthetic(n: usize, dim: usize, scale: f64, clip_threshold: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let vectors =
            (0..n).map(|_| (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        Self::new(vectors, clip_threshold)
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn clipped(&self) -> &[Vec<f64>] {
        &self.clipped
    }

    pub fn clip_threshold(&self) -> f64 {
        self.clip_threshold
    }

    pub fn dimension(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    fn column(&self, j: usize) -> Result<Vec<f64>> {
        if j >= self.dimension() {
            return invalid(format!("coordinate {j} out of range for dimension {}", self.dimension()));
        }
        Ok(self.clipped.iter().map(|v| v[j]).collect())
    }

    /// `Σ_i g̃_{i,j}`.
    pub fn full_sum(&self, j: usize) -> Result<f64> {
        Ok(self.column(j)?.iter().sum())
    }
}

/// Per-coordinate variance split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceDecomposition {
    pub subsampling_var: f64,
    pub effective_noise_var: f64,
    pub total_var: f64,
}

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        invalid(format!("sampling rate must lie in (0, 1], got {q}"))
    }
}

fn check_noise(sigma: f64) -> Result<()> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        invalid(format!("sigma must be nonnegative and finite, got {sigma}"))
    }
}

/// Closed-form variance of coordinate `j` of the scaled noisy sum.
pub fn analytic_decomposition(grads: &GradientSet, q: f64, sigma: f64, j: usize) -> Result<VarianceDecomposition> {
    check_q(q)?;
    check_noise(sigma)?;
    let sum_sq: f64 = grads.column(j)?.iter().map(|g| g * g).sum();
    let subsampling_var = (1.0 - q) / q * sum_sq;
    let effective_noise_var = (sigma * grads.clip_threshold / q).powi(2);
    Ok(VarianceDecomposition { subsampling_var, effective_noise_var, total_var: subsampling_var + effective_noise_var })
}

/// Streaming central moments up to order four, mergeable across chunks.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        let n1 = self.n;
        self.n += 1.0;
        let n = self.n;
        let delta = x - self.mean;
        let dn = delta / n;
        let dn2 = dn * dn;
        let term1 = delta * dn * n1;
        self.mean += dn;
        self.m4 += term1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * self.m2 - 4.0 * dn * self.m3;
        self.m3 += term1 * dn * (n - 2.0) - 3.0 * dn * self.m2;
        self.m2 += term1;
    }

    fn merge(&self, other: &Self) -> Self {
        if self.n == 0.0 {
            return *other;
        }
        if other.n == 0.0 {
            return *self;
        }
        let (na, nb) = (self.n, other.n);
        let n = na + nb;
        let d = other.mean - self.mean;
        let d2 = d * d;
        let mean = self.mean + d * nb / n;
        let m2 = self.m2 + other.m2 + d2 * na * nb / n;
        let m3 =
            self.m3 + other.m3 + d * d2 * na * nb * (na - nb) / (n * n) + 3.0 * d * (na * other.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + other.m4
            + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * d * (na * other.m3 - nb * self.m3) / n;
        Self { n, mean, m2, m3, m4 }
    }
}

/// Monte Carlo estimate of the mean and variance of coordinate `j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationResult {
    pub samples: u64,
    pub seed: u64,
    pub empirical_mean: f64,
    /// Unbiased sample variance.
    pub empirical_var: f64,
    pub mean_stderr: f64,
    pub var_stderr: f64,
}

/// Draws `samples` realizations of `(1/q)·(Σ b_i·g̃_{i,j} + σC·η)`.
///
/// Draws are split into fixed-size chunks, each with its own ChaCha stream
/// derived from `seed`, so the result depends only on the arguments.
pub fn simulate_dp_gradient(
    grads: &GradientSet,
    q: f64,
    sigma: f64,
    j: usize,
    samples: u64,
    seed: u64,
) -> Result<SimulationResult> {
    check_q(q)?;
    check_noise(sigma)?;
    if samples < MIN_SAMPLES {
        return invalid(format!("at least {MIN_SAMPLES} samples are required, got {samples}"));
    }
    let column = grads.column(j)?;
    let noise_scale = sigma * grads.clip_threshold;
    let mut total = Moments::default();
    let chunks = samples.div_ceil(CHUNK);
    for chunk in 0..chunks {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(chunk);
        let count = CHUNK.min(samples - chunk * CHUNK);
        let mut local = Moments::default();
        for _ in 0..count {
            let mut acc = 0.0;
            for &g in &column {
                if q >= 1.0 || rng.random_bool(q) {
                    acc += g;
                }
            }
            if noise_scale > 0.0 {
                acc += noise_scale * rng.sample::<f64, _>(StandardNormal);
            }
            local.push(acc / q);
        }
        total = total.merge(&local);
    }
    let n = total.n;
    let var = total.m2 / (n - 1.0);
    let pop_var = total.m2 / n;
    let m4 = total.m4 / n;
    Ok(SimulationResult {
        samples,
        seed,
        empirical_mean: total.mean,
        empirical_var: var,
        mean_stderr: (var / n).sqrt(),
        var_stderr: ((m4 - pop_var * pop_var).max(0.0) / n).sqrt(),
    })
}

/// Whether the subsampling variance never increases along `q_grid`.
pub fn subsampling_variance_monotonicity(grads: &GradientSet, j: usize, q_grid: &[f64]) -> Result<bool> {
    if q_grid.is_empty() || q_grid.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("q grid must be nonempty and strictly increasing");
    }
    let mut previous = f64::INFINITY;
    for &q in q_grid {
        let v = analytic_decomposition(grads, q, 0.0, j)?.subsampling_var;
        if v > previous {
            return Ok(false);
        }
        previous = v;
    }
    Ok(true)
}

/// Outcome of one randomized configuration in [`variance_suite`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceCheck {
    pub row: VarianceRow,
    /// `Σ g̃_{i,j}`, the target of the estimator.
    pub full_sum: f64,
    /// Deviations in standard errors.
    pub mean_z: f64,
    pub var_z: f64,
    pub pass: bool,
}

/// Standard-error multiple allowed by [`variance_suite`].
pub const SUITE_Z: f64 = 4.0;

/// Compares simulation and closed form on `configs` random configurations,
/// all derived from `seed`.
pub fn variance_suite(seed: u64, configs: usize, samples: u64) -> Result<Vec<VarianceCheck>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(configs);
    for _ in 0..configs {
        let n = rng.random_range(2..=16);
        let dim = rng.random_range(1..=4);
        let scale = rng.random_range(0.1..3.0);
        let clip_threshold = rng.random_range(0.5..2.0);
        let q = rng.random_range(0.05..=1.0);
        let sigma = rng.random_range(0.0..3.0);
        let j = rng.random_range(0..dim);
        let grads = GradientSet::synthetic(n, dim, scale, clip_threshold, rng.random())?;
        let analytic = analytic_decomposition(&grads, q, sigma, j)?;
        let simulated = simulate_dp_gradient(&grads, q, sigma, j, samples, rng.random())?;
        let full_sum = grads.full_sum(j)?;
        let z = |diff: f64, se: f64| {
            if se > 0.0 {
                diff.abs() / se
            } else if diff.abs() <= 1e-9 * (1.0 + full_sum.abs()) {
                0.0
            } else {
                f64::INFINITY
            }
        };
        let mean_z = z(simulated.empirical_mean - full_sum, simulated.mean_stderr);
        let var_z = z(simulated.empirical_var - analytic.total_var, simulated.var_stderr);
        out.push(VarianceCheck {
            row: VarianceRow { q, sigma, analytic, simulated },
            full_sum,
            mean_z,
            var_z,
            pass: mean_z <= SUITE_Z && var_z <= SUITE_Z,
        });
    }
    Ok(out)
}

/// One line of the variance CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceRow {
    pub q: f64,
    pub sigma: f64,
    pub analytic: VarianceDecomposition,
    pub simulated: SimulationResult,
}

pub fn write_variance_csv<W: Write>(rows: &[VarianceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "q,sigma,subsampling_var,effective_noise_var,total_analytic,total_empirical,stderr")?;
    for r in rows {
        writeln!(
            out,
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            r.q,
            r.sigma,
            r.analytic.subsampling_var,
            r.analytic.effective_noise_var,
            r.analytic.total_var,
            r.simulated.empirical_var,
            r.simulated.var_stderr
        )?;
    }
    Ok(())
}
