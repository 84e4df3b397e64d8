//! Privacy accounting for the Poisson subsampled Gaussian mechanism.

pub mod asymptotics;
pub mod calibrate;
pub mod error;
pub mod mechanism;
pub mod pld;
pub mod quadrature;
pub mod single_step;
pub mod special;
pub mod sweep;
pub mod variance;

pub use asymptotics::{
    ao_gap_bound, kl_gaussian_vs_mixture, kl_rate_check, plrv_moment_check, sigma_growth_witness, tv_bound_composed,
    GrowthReport, KlCheckResult, KlRateReport, MomentCheck,
};
pub use calibrate::{calibrate_sigma, calibrate_sigma_with_tol, convergence_ratio, gaussian_sigma, CalibrationResult};
pub use error::{Error, Result};
pub use mechanism::{
    analytic_delta_single_step, delta_monotonicity_check, dominating_pair_densities, gaussian_delta, privacy_loss,
    DominatingPair, MechanismParams, PrivacyBudget, PrivacyLossFn,
};
pub use pld::{
    accountant_delta, compose_mechanism, delta_from_pld, discretize, self_compose, AccountantConfig, DiscretePld,
    Rounding,
};
pub use single_step::{
    compute_ab, conjecture_sweep, effective_sigma_derivative_sign, sigma_prime, AbPair, ConjectureRow,
    ConjectureSweepConfig, SigmaEffTrend,
};
pub use sweep::{run_convergence_sweep, sweep_laws, SweepLaws, SweepRow, SweepSpec};
pub use variance::{
    analytic_decomposition, clip, simulate_dp_gradient, subsampling_variance_monotonicity, GradientSet,
    SimulationResult, VarianceDecomposition,
};
