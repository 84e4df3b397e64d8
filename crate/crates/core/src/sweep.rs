//! Grid sweep of calibrated σ over `(ε, q, T)` and the laws its output is
//! expected to follow.

use std::io::Write;

use crate::calibrate::{calibrate_sigma_with_tol, gaussian_sigma, DEFAULT_REL_TOL};
use crate::error::{invalid, Error, Result};
use crate::mechanism::MechanismParams;
use crate::pld::{accountant_delta, AccountantConfig, Rounding};
use crate::single_step::geometric_grid;

/// Sweep grid and accountant settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub epsilons: Vec<f64>,
    /// Ascending, in `(0, 1]`.
    pub qs: Vec<f64>,
    /// Ascending.
    pub iteration_counts: Vec<u64>,
    pub delta_target: f64,
    pub accountant: AccountantConfig,
    pub rel_tol: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            epsilons: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            qs: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0],
            iteration_counts: vec![1, 10, 100, 1_000, 10_000],
            delta_target: 1e-5,
            accountant: AccountantConfig::default(),
            rel_tol: DEFAULT_REL_TOL,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() || self.qs.is_empty() || self.iteration_counts.is_empty() {
            return invalid("sweep lists must be nonempty");
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return invalid("epsilons must be positive");
        }
        if self.qs.iter().any(|&q| !(q > 0.0 && q <= 1.0)) || self.qs.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("q values must lie in (0, 1] and be sorted ascending");
        }
        if self.iteration_counts.contains(&0) || self.iteration_counts.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("iteration counts must be positive and sorted ascending");
        }
        if !(self.delta_target > 0.0 && self.delta_target < 1.0) {
            return invalid(format!("delta target must lie in (0, 1), got {}", self.delta_target));
        }
        self.accountant.validate()
    }
}

/// One `(ε, q, T)` cell of the sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub q: f64,
    pub iterations: u64,
    pub sigma: f64,
    pub sigma_eff: f64,
    pub sigma_full_batch: f64,
    /// `σ(q, T)/(q·σ(1, T))`.
    pub ratio: f64,
}

pub const SWEEP_HEADER: &str = "epsilon,q,T,sigma,sigma_eff,sigma_full_batch,ratio";

pub fn format_sweep_row(r: &SweepRow) -> String {
    format!(
        "{:.12e},{:.12e},{},{:.12e},{:.12e},{:.12e},{:.12e}",
        r.epsilon, r.q, r.iterations, r.sigma, r.sigma_eff, r.sigma_full_batch, r.ratio
    )
}

/// Relative increase of δ along σ tolerated as summation rounding; matters
/// where δ has saturated at `q` and the true decrease is below `1e−16`.
/// The tail-mass budget is allowed on top, since pessimistic δ carries up to
/// that much truncated mass.
pub const MONOTONE_SLACK: f64 = 1e-10;

/// Checks that the pessimistic δ(ε) does not increase along a coarse σ grid
/// between `q·c` and `c`, where `c` is the full-batch Gaussian estimate
/// `√T·σ_G(ε, δ)` (`[c/2, 2c]` when `q = 1`). Points whose grid would
/// overflow are skipped.
pub fn check_delta_monotone_in_sigma(
    q: f64,
    iterations: u64,
    epsilon: f64,
    delta_target: f64,
    cfg: &AccountantConfig,
) -> Result<bool> {
    let c = (iterations as f64).sqrt() * gaussian_sigma(epsilon, delta_target)?;
    let (lo, hi) = if q < 1.0 { (q * c, c) } else { (0.5 * c, 2.0 * c) };
    let mut previous = f64::INFINITY;
    for sigma in geometric_grid(lo, hi, 6) {
        let params = MechanismParams::new(sigma, q, 1.0, iterations)?;
        let d = match accountant_delta(&params, epsilon, cfg, Rounding::Pessimistic) {
            Err(Error::GridOverflow { .. }) => continue,
            other => other?,
        };
        if d > previous * (1.0 + MONOTONE_SLACK) + cfg.tail_mass_budget {
            return Ok(false);
        }
        previous = d;
    }
    Ok(true)
}

/// Runs the sweep, streaming CSV rows to `out` in `(ε, q, T)` order.
///
/// `progress` receives each finished row. On a calibration failure the rows
/// written so far are kept, a `# error: …` line is appended and the error is
/// returned.
pub fn run_convergence_sweep<W: Write, F: FnMut(&SweepRow)>(
    spec: &SweepSpec,
    mut out: W,
    mut progress: F,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    writeln!(out, "{SWEEP_HEADER}")?;
    let mut rows = Vec::new();
    let result = sweep_cells(spec, &mut out, &mut rows, &mut progress);
    if let Err(e) = &result {
        writeln!(out, "# error: {e}")?;
    }
    out.flush()?;
    result.map(|_| rows)
}

fn sweep_cells<W: Write, F: FnMut(&SweepRow)>(
    spec: &SweepSpec,
    out: &mut W,
    rows: &mut Vec<SweepRow>,
    progress: &mut F,
) -> Result<()> {
    let cfg = &spec.accountant;
    let t_min = spec.iteration_counts[0];
    for &epsilon in &spec.epsilons {
        for &q in [spec.qs[0], spec.qs[spec.qs.len() - 1]].iter() {
            if !check_delta_monotone_in_sigma(q, t_min, epsilon, spec.delta_target, cfg)? {
                return Err(Error::NoConvergence(format!(
                    "accountant δ is not monotone in σ at q = {q}, T = {t_min}, ε = {epsilon}"
                )));
            }
        }
        let full: Vec<f64> = spec
            .iteration_counts
            .iter()
            .map(|&t| calibrate_sigma_with_tol(1.0, t, epsilon, spec.delta_target, cfg, spec.rel_tol).map(|r| r.sigma))
            .collect::<Result<_>>()?;
        for &q in &spec.qs {
            for (k, &t) in spec.iteration_counts.iter().enumerate() {
                let sigma = if q == 1.0 {
                    full[k]
                } else {
                    calibrate_sigma_with_tol(q, t, epsilon, spec.delta_target, cfg, spec.rel_tol)?.sigma
                };
                let row = SweepRow {
                    epsilon,
                    q,
                    iterations: t,
                    sigma,
                    sigma_eff: sigma / q,
                    sigma_full_batch: full[k],
                    ratio: sigma / (q * full[k]),
                };
                writeln!(out, "{}", format_sweep_row(&row))?;
                progress(&row);
                rows.push(row);
            }
        }
    }
    Ok(())
}

/// Worst relative violations of the expected sweep laws. A value ≤ 0 means
/// the law holds exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepLaws {
    /// `max σ_eff(q_{k+1})/σ_eff(q_k) − 1` over `(ε, T)`.
    pub sigma_eff_increase: f64,
    /// `max ratio(T_{k+1})/ratio(T_k) − 1` over `(ε, q)`.
    pub ratio_increase_in_t: f64,
    pub min_ratio: f64,
}

impl SweepLaws {
    /// All laws hold with relative slack `slack`.
    pub fn hold(&self, slack: f64) -> bool {
        self.sigma_eff_increase <= slack && self.ratio_increase_in_t <= slack && self.min_ratio >= 1.0 - slack
    }
}

/// Evaluates the laws on rows in sweep order.
pub fn sweep_laws(rows: &[SweepRow]) -> SweepLaws {
    let mut laws = SweepLaws {
        sigma_eff_increase: f64::NEG_INFINITY,
        ratio_increase_in_t: f64::NEG_INFINITY,
        min_ratio: f64::INFINITY,
    };
    let find = |e: f64, q: f64, t: u64| rows.iter().find(|r| r.epsilon == e && r.q == q && r.iterations == t);
    for r in rows {
        laws.min_ratio = laws.min_ratio.min(r.ratio);
        let next_q = rows
            .iter()
            .filter(|s| s.epsilon == r.epsilon && s.iterations == r.iterations && s.q > r.q)
            .min_by(|a, b| a.q.total_cmp(&b.q));
        if let Some(n) = next_q {
            laws.sigma_eff_increase = laws.sigma_eff_increase.max(n.sigma_eff / r.sigma_eff - 1.0);
        }
        let next_t = rows
            .iter()
            .filter(|s| s.epsilon == r.epsilon && s.q == r.q && s.iterations > r.iterations)
            .map(|s| s.iterations)
            .min();
        if let Some(n) = next_t.and_then(|t| find(r.epsilon, r.q, t)) {
            laws.ratio_increase_in_t = laws.ratio_increase_in_t.max(n.ratio / r.ratio - 1.0);
        }
    }
    laws
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SweepSpec {
        SweepSpec {
            epsilons: vec![1.0],
            qs: vec![0.1, 1.0],
            iteration_counts: vec![1, 4],
            accountant: AccountantConfig::with_grid_step(1e-3),
            ..SweepSpec::default()
        }
    }

    #[test]
    fn spec_validation() {
        assert!(SweepSpec::default().validate().is_ok());
        let mut s = small_spec();
        s.qs = vec![0.5, 0.1];
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.iteration_counts = vec![];
        assert!(s.validate().is_err());
    }

    #[test]
    fn small_sweep_writes_rows_in_order() {
        let mut buf = Vec::new();
        let mut seen = 0;
        let rows = run_convergence_sweep(&small_spec(), &mut buf, |_| seen += 1).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(seen, 4);
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SWEEP_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(rows[2].q == 1.0 && rows[2].ratio == 1.0);
        assert!(sweep_laws(&rows).hold(2e-4));
    }

    #[test]
    fn failing_sweep_leaves_a_trailer() {
        let spec = SweepSpec { qs: vec![1e-6], iteration_counts: vec![1], delta_target: 0.5, ..small_spec() };
        let mut buf = Vec::new();
        assert!(run_convergence_sweep(&spec, &mut buf, |_| {}).is_err());
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().last().unwrap().starts_with("# error:"));
    }

    #[test]
    fn laws_detect_violations() {
        let row = |q: f64, t: u64, sigma: f64, full: f64| SweepRow {
            epsilon: 1.0,
            q,
            iterations: t,
            sigma,
            sigma_eff: sigma / q,
            sigma_full_batch: full,
            ratio: sigma / (q * full),
        };
        let rows = vec![row(0.5, 1, 1.0, 1.0), row(0.5, 2, 2.0, 1.5), row(1.0, 1, 1.0, 1.0), row(1.0, 2, 1.5, 1.5)];
        let laws = sweep_laws(&rows);
        assert!(laws.ratio_increase_in_t > 0.3);
        assert!(!laws.hold(1e-3));
    }
}
