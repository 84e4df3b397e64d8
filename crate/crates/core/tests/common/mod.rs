#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use sgm_core::PrivacyLossFn;

/// Monte Carlo estimate of `δ(ε) = E_P[(1 − e^{ε − L})₊]` for the `T`-fold
/// composed loss `L`, with its standard error.
pub fn monte_carlo_delta(sigma: f64, q: f64, iterations: u64, epsilon: f64, samples: u64, seed: u64) -> (f64, f64) {
    let loss = PrivacyLossFn::new(sigma, q).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let mut total = 0.0;
        for _ in 0..iterations {
            let z: f64 = rng.sample(StandardNormal);
            let mean = if rng.random_bool(q) { 1.0 } else { 0.0 };
            total += loss.loss_at(mean + sigma * z);
        }
        let v = (-(epsilon - total).exp_m1()).max(0.0);
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}
