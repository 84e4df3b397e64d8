//! Shared fixtures for the benchmarks.

use sgm_core::{AccountantConfig, DiscretePld, MechanismParams, PrivacyLossFn, Rounding};

/// A DP-SGD style setting: noise multiplier 1, one percent sampling.
pub fn typical_params(iterations: u64) -> MechanismParams {
    MechanismParams::new(1.0, 0.01, 1.0, iterations).expect("valid parameters")
}

/// Single-step pessimistic PLD of [`typical_params`] at the default grid.
pub fn typical_single_step() -> DiscretePld {
    let loss = PrivacyLossFn::new(1.0, 0.01).expect("valid parameters");
    sgm_core::discretize(&loss, &AccountantConfig::default(), Rounding::Pessimistic).expect("grid fits")
}
