use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sgm_core::asymptotics::{moment_grid, write_growth_csv, write_kl_csv, write_moments_csv};
use sgm_core::single_step::write_conjecture_csv;
use sgm_core::variance::{variance_suite, write_variance_csv, VarianceRow};
use sgm_core::{
    accountant_delta, analytic_decomposition, calibrate_sigma_with_tol, conjecture_sweep, kl_rate_check,
    plrv_moment_check, run_convergence_sweep, sigma_growth_witness, simulate_dp_gradient, sweep_laws, AccountantConfig,
    ConjectureSweepConfig, Error, GradientSet, MechanismParams, Rounding, SweepSpec,
};

const EXIT_USAGE: u8 = 2;
const EXIT_OVERFLOW: u8 = 3;
const EXIT_CALIBRATION: u8 = 4;
const EXIT_VERIFY: u8 = 5;

#[derive(Parser)]
#[command(name = "sgm", version, about = "Privacy accounting for the Poisson subsampled Gaussian mechanism")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Pessimistic,
    Optimistic,
}

impl From<Mode> for Rounding {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Pessimistic => Rounding::Pessimistic,
            Mode::Optimistic => Rounding::Optimistic,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// δ(ε) of the composed mechanism.
    Delta {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        iterations: u64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-4)]
        grid_step: f64,
        #[arg(long, value_enum, default_value_t = Mode::Pessimistic)]
        mode: Mode,
    },
    /// Smallest σ meeting an (ε, δ) target.
    Calibrate {
        #[arg(long)]
        q: f64,
        #[arg(long)]
        iterations: u64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 1e-4)]
        grid_step: f64,
        #[arg(long, default_value_t = 1e-4)]
        rel_tol: f64,
    },
    /// Calibrated σ over an (ε, q, T) grid, as CSV.
    ConvergenceSweep {
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 1.0, 2.0, 4.0])]
        epsilons: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0])]
        qs: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 10, 100, 1_000, 10_000])]
        iterations: Vec<u64>,
        #[arg(long, default_value_t = 1e-5)]
        delta_target: f64,
        #[arg(long, default_value_t = 1e-4)]
        grid_step: f64,
        #[arg(long, default_value_t = 1e-4)]
        rel_tol: f64,
        /// Defaults to standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Largest a − b over feasible single-step cells, per ε, as CSV.
    ConjectureSweep {
        #[arg(long, default_value_t = 1e-5)]
        delta_target: f64,
        #[arg(long, default_value_t = ConjectureSweepConfig::DEFAULT_EPSILON_RANGE.0)]
        epsilon_min: f64,
        #[arg(long, default_value_t = ConjectureSweepConfig::DEFAULT_EPSILON_RANGE.1)]
        epsilon_max: f64,
        #[arg(long, default_value_t = ConjectureSweepConfig::DEFAULT_EPSILON_POINTS)]
        epsilon_points: usize,
        #[arg(long, default_value_t = ConjectureSweepConfig::DEFAULT_Q_POINTS)]
        q_points: usize,
        #[arg(long, default_value_t = ConjectureSweepConfig::DEFAULT_SIGMA_POINTS)]
        sigma_points: usize,
        /// Smallest swept q; defaults to 4·δ_target.
        #[arg(long)]
        q_min: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Numerical checks; exits 5 if any fails.
    Verify {
        #[command(subcommand)]
        check: Verify,
    },
    /// Monte Carlo variance of the noisy subsampled gradient sum.
    SimulateVariance {
        #[arg(long, default_value_t = 10)]
        examples: usize,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        /// Standard deviation of the synthetic gradient entries.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 1.0)]
        clip: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        coordinate: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Verify {
    /// KL(q, u) against its fourth-order leading term.
    Kl {
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5, 0.9])]
        q: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.4, 0.2, 0.1, 0.05, 0.025])]
        u: Vec<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Single-step privacy loss mean and variance bounds on a 10×10 grid.
    Moments {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// σ²/T stays bounded away from zero as T grows.
    Growth {
        #[arg(long, default_value_t = 0.2)]
        q: f64,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [10u64, 100, 1_000, 10_000])]
        iterations: Vec<u64>,
        #[arg(long, default_value_t = 1e-4)]
        grid_step: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Simulated mean and variance against the closed form on random configurations.
    Variance {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        configs: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

enum Failure {
    Core(Error),
    Verify,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter(_) => EXIT_USAGE,
        Error::GridOverflow { .. } | Error::MassDrift { .. } => EXIT_OVERFLOW,
        Error::NoConvergence(_) | Error::EmptyFeasibleSet { .. } => EXIT_CALIBRATION,
        Error::QuadratureFailure { .. } | Error::Io(_) => 1,
    }
}

fn open_output(path: Option<&PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn config(grid_step: f64) -> AccountantConfig {
    AccountantConfig::with_grid_step(grid_step)
}

fn verdict(pass: bool, what: &str) -> bool {
    println!("{} {what}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Delta { sigma, q, iterations, epsilon, grid_step, mode } => {
            let params = MechanismParams::new(sigma, q, 1.0, iterations)?;
            let delta = accountant_delta(&params, epsilon, &config(grid_step), mode.into())?;
            println!("{delta:.6e}");
        }
        Command::Calibrate { q, iterations, epsilon, delta, grid_step, rel_tol } => {
            let r = calibrate_sigma_with_tol(q, iterations, epsilon, delta, &config(grid_step), rel_tol)?;
            println!("sigma={:.12e} sigma_eff={:.12e} achieved_delta={:.12e}", r.sigma, r.sigma_eff, r.achieved_delta);
        }
        Command::ConvergenceSweep { epsilons, qs, iterations, delta_target, grid_step, rel_tol, output } => {
            let spec = SweepSpec {
                epsilons,
                qs,
                iteration_counts: iterations,
                delta_target,
                accountant: config(grid_step),
                rel_tol,
            };
            spec.validate()?;
            let total = spec.epsilons.len() * spec.qs.len() * spec.iteration_counts.len();
            let mut done = 0;
            let out = open_output(output.as_ref())?;
            let rows = run_convergence_sweep(&spec, out, |r| {
                done += 1;
                eprintln!(
                    "[{done}/{total}] epsilon={} q={} T={} sigma={:.6e} ratio={:.6}",
                    r.epsilon, r.q, r.iterations, r.sigma, r.ratio
                );
            })?;
            let laws = sweep_laws(&rows);
            eprintln!(
                "max sigma_eff increase in q {:.3e}, max ratio increase in T {:.3e}, min ratio {:.6}",
                laws.sigma_eff_increase, laws.ratio_increase_in_t, laws.min_ratio
            );
        }
        Command::ConjectureSweep {
            delta_target,
            epsilon_min,
            epsilon_max,
            epsilon_points,
            q_points,
            sigma_points,
            q_min,
            output,
        } => {
            let cfg = ConjectureSweepConfig {
                q_points,
                sigma_points,
                q_min,
                ..ConjectureSweepConfig::with_epsilon_range(delta_target, epsilon_min, epsilon_max, epsilon_points)
            };
            let rows = conjecture_sweep(&cfg)?;
            let mut out = open_output(output.as_ref())?;
            write_conjecture_csv(&rows, &mut out)?;
            out.flush()?;
        }
        Command::Verify { check } => {
            if !verify(check)? {
                return Err(Failure::Verify);
            }
        }
        Command::SimulateVariance { examples, dim, scale, clip, q, sigma, coordinate, samples, seed, output } => {
            let grads = GradientSet::synthetic(examples, dim, scale, clip, seed)?;
            let analytic = analytic_decomposition(&grads, q, sigma, coordinate)?;
            let simulated = simulate_dp_gradient(&grads, q, sigma, coordinate, samples, seed)?;
            let mut out = open_output(output.as_ref())?;
            write_variance_csv(&[VarianceRow { q, sigma, analytic, simulated }], &mut out)?;
            writeln!(
                out,
                "# seed={seed} samples={samples} empirical_mean={:.12e} full_sum={:.12e} mean_stderr={:.12e}",
                simulated.empirical_mean,
                grads.full_sum(coordinate)?,
                simulated.mean_stderr
            )?;
            out.flush()?;
        }
    }
    Ok(())
}

fn verify(check: Verify) -> Result<bool, Failure> {
    let mut all = true;
    match check {
        Verify::Kl { q, u, output } => {
            let mut rows = Vec::new();
            for &qv in &q {
                let report = kl_rate_check(qv, &u)?;
                for r in &report.rows {
                    println!(
                        "q={} u={} kl={:.6e} predicted={:.6e} ratio={:.6}",
                        r.q, r.u, r.kl_value, r.predicted_leading, r.ratio
                    );
                }
                match report.passed {
                    Some(p) => all &= verdict(p, &format!("kl q={qv}")),
                    None => println!("SKIP kl q={qv} (degenerate or final u above 0.05)"),
                }
                rows.extend(report.rows);
            }
            if let Some(p) = output {
                write_kl_csv(&rows, BufWriter::new(File::create(p)?))?;
            }
        }
        Verify::Moments { output } => {
            let mut rows = Vec::new();
            for (q, sigma) in moment_grid() {
                let m = plrv_moment_check(q, sigma)?;
                if !m.pass {
                    println!(
                        "violation q={q} sigma={sigma} mean={:.6e} bound={:.6e} var={:.6e} bound={:.6e}",
                        m.mean, m.mean_lower_bound, m.variance, m.variance_upper_bound
                    );
                }
                all &= m.pass;
                rows.push(m);
            }
            verdict(all, &format!("moments ({} grid points)", rows.len()));
            if let Some(p) = output {
                write_moments_csv(&rows, BufWriter::new(File::create(p)?))?;
            }
        }
        Verify::Growth { q, epsilon, delta, iterations, grid_step, output } => {
            let report = sigma_growth_witness(q, epsilon, delta, &iterations, &config(grid_step))?;
            for r in &report.rows {
                println!("T={} sigma={:.6e} sigma_sq_over_T={:.6e}", r.iterations, r.sigma, r.sigma_sq_over_t);
            }
            all &= verdict(
                report.pass,
                &format!("growth min={:.6e} last/first={:.6}", report.min_ratio, report.last_over_first),
            );
            if let Some(p) = output {
                write_growth_csv(&report.rows, BufWriter::new(File::create(p)?))?;
            }
        }
        Verify::Variance { seed, configs, samples, output } => {
            let checks = variance_suite(seed, configs, samples)?;
            for (k, c) in checks.iter().enumerate() {
                let r = &c.row;
                println!(
                    "config={k} q={:.6} sigma={:.6} total={:.6e} empirical={:.6e} var_z={:.3} mean_z={:.3}",
                    r.q, r.sigma, r.analytic.total_var, r.simulated.empirical_var, c.var_z, c.mean_z
                );
                all &= verdict(c.pass, &format!("variance config={k}"));
            }
            if let Some(p) = output {
                let rows: Vec<VarianceRow> = checks.iter().map(|c| c.row).collect();
                write_variance_csv(&rows, BufWriter::new(File::create(p)?))?;
            }
        }
    }
    Ok(all)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verify) => ExitCode::from(EXIT_VERIFY),
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
