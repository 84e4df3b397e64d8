//! Privacy loss distributions on a uniform loss grid.
//!
//! A [`DiscretePld`] holds the distribution of the privacy loss under `P`
//! as point masses at integer multiples of the grid step, plus two tail
//! masses. Pessimistic distributions upper-bound every δ(ε) of the
//! continuous mechanism and optimistic ones lower-bound it; both properties
//! survive [`self_compose`].

mod compose;
mod discretize;

use std::io::Write;

use crate::error::{invalid, Result};
use crate::mechanism::{check_epsilon, MechanismParams};

pub use compose::{convolve, self_compose};
pub use discretize::discretize;

/// Direction of the discretization error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rounding {
    /// δ computed from the PLD is never below the true δ.
    Pessimistic,
    /// δ computed from the PLD is never above the true δ.
    Optimistic,
}

impl std::fmt::Display for Rounding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Rounding::Pessimistic => "pessimistic",
            Rounding::Optimistic => "optimistic",
        })
    }
}

/// Accuracy settings of the accountant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccountantConfig {
    /// Bin width in loss units.
    pub grid_step: f64,
    /// Probability mass that may be truncated on each side, over a whole
    /// composition.
    pub tail_mass_budget: f64,
    pub max_grid_points: usize,
}

impl Default for AccountantConfig {
    fn default() -> Self {
        Self { grid_step: 1e-4, tail_mass_budget: 1e-12, max_grid_points: 1 << 26 }
    }
}

impl AccountantConfig {
    pub fn with_grid_step(grid_step: f64) -> Self {
        Self { grid_step, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grid_step > 0.0 && self.grid_step.is_finite()) {
            return invalid(format!("grid step must be positive, got {}", self.grid_step));
        }
        if !(self.tail_mass_budget > 0.0 && self.tail_mass_budget < 1.0) {
            return invalid(format!("tail mass budget must lie in (0, 1), got {}", self.tail_mass_budget));
        }
        if self.max_grid_points < 2 {
            return invalid("max_grid_points must be at least 2");
        }
        Ok(())
    }
}

/// Discrete privacy loss distribution.
///
/// Bin `i` sits at loss `(origin_index + i)·step`. For pessimistic PLDs the
/// top tail is mass at `+∞` and the bottom tail is mass held at
/// `grid_origin`; for optimistic ones the top tail is always zero and the
/// bottom tail is mass at `−∞`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePld {
    pub(crate) origin_index: i64,
    pub(crate) step: f64,
    pub(crate) masses: Vec<f64>,
    pub(crate) top_tail: f64,
    pub(crate) bottom_tail: f64,
    pub(crate) rounding: Rounding,
}

impl DiscretePld {
    /// Builds a PLD from raw parts. Fails on negative or non-finite masses
    /// and on total mass outside `1 ± 1e-12`.
    pub fn from_parts(
        origin_index: i64,
        step: f64,
        masses: Vec<f64>,
        top_tail: f64,
        bottom_tail: f64,
        rounding: Rounding,
    ) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return invalid("grid step must be positive");
        }
        if masses.is_empty() {
            return invalid("a PLD needs at least one bin");
        }
        if masses.iter().chain([&top_tail, &bottom_tail]).any(|m| !(m.is_finite() && *m >= 0.0)) {
            return invalid("masses must be finite and nonnegative");
        }
        let pld = Self { origin_index, step, masses, top_tail, bottom_tail, rounding };
        let total = pld.total_mass();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("total mass {total} differs from 1"));
        }
        Ok(pld)
    }

    /// Loss value of bin 0.
    pub fn grid_origin(&self) -> f64 {
        self.origin_index as f64 * self.step
    }

    /// Bin 0 as a multiple of the step.
    pub fn origin_index(&self) -> i64 {
        self.origin_index
    }

    pub fn grid_step(&self) -> f64 {
        self.step
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn top_tail_mass(&self) -> f64 {
        self.top_tail
    }

    pub fn bottom_tail_mass(&self) -> f64 {
        self.bottom_tail
    }

    pub fn rounding(&self) -> Rounding {
        self.rounding
    }

    /// Loss of bin `i`.
    pub fn loss(&self, i: usize) -> f64 {
        (self.origin_index + i as i64) as f64 * self.step
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum::<f64>() + self.top_tail + self.bottom_tail
    }

    /// Mean and variance of the loss over the grid bins. Pessimistic bottom
    /// tail mass is included at `grid_origin`; mass at ±∞ is left out.
    pub fn moments(&self) -> (f64, f64) {
        let mut weight = 0.0;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        let mut add = |x: f64, w: f64| {
            if w > 0.0 {
                weight += w;
                let d = x - mean;
                mean += d * w / weight;
                m2 += w * d * (x - mean);
            }
        };
        if self.rounding == Rounding::Pessimistic {
            add(self.grid_origin(), self.bottom_tail);
        }
        for (i, &m) in self.masses.iter().enumerate() {
            add(self.loss(i), m);
        }
        (mean, m2 / weight)
    }

    /// Writes `loss,mass` rows followed by a tail/step footer.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "loss,mass")?;
        for (i, m) in self.masses.iter().enumerate() {
            writeln!(out, "{:.12e},{:.12e}", self.loss(i), m)?;
        }
        writeln!(out, "# top_tail={:e} bottom_tail={:e} step={:e}", self.top_tail, self.bottom_tail, self.step)
    }
}

/// δ(ε) of a discrete PLD: `Σ m_i·(1 − e^{ε − s_i})_+` plus the tail terms.
pub fn delta_from_pld(pld: &DiscretePld, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    let mut delta = 0.0;
    let first = ((epsilon / pld.step).floor() as i64 - pld.origin_index + 1).max(0) as usize;
    for i in first..pld.masses.len() {
        let s = pld.loss(i);
        if s > epsilon {
            delta += pld.masses[i] * -(epsilon - s).exp_m1();
        }
    }
    if pld.rounding == Rounding::Pessimistic {
        delta += pld.top_tail;
        let s0 = pld.grid_origin();
        if s0 > epsilon {
            delta += pld.bottom_tail * -(epsilon - s0).exp_m1();
        }
    }
    Ok(delta.clamp(0.0, 1.0))
}

/// Discretizes one iteration of `params` and composes it
/// `params.iterations` times, splitting the tail budget between the
/// per-step truncation and the convolutions.
pub fn compose_mechanism(params: &MechanismParams, cfg: &AccountantConfig, rounding: Rounding) -> Result<DiscretePld> {
    cfg.validate()?;
    let loss = params.loss_fn();
    let t = params.iterations;
    let step_cfg = AccountantConfig { tail_mass_budget: cfg.tail_mass_budget / (4.0 * t as f64), ..*cfg };
    let single = discretize(&loss, &step_cfg, rounding)?;
    self_compose(&single, t, cfg)
}

/// δ(ε) of the composed mechanism from the discrete accountant.
pub fn accountant_delta(
    params: &MechanismParams,
    epsilon: f64,
    cfg: &AccountantConfig,
    rounding: Rounding,
) -> Result<f64> {
    check_epsilon(epsilon)?;
    delta_from_pld(&compose_mechanism(params, cfg, rounding)?, epsilon)
}
