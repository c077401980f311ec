//! Convergence studies and energy-trace experiments, with CSV/JSON output.
//!
//! A convergence study integrates the problem at a ladder of step counts,
//! measures the error at the final time against a reference (exact solution,
//! a fine run of the same scheme, or a fine semi-implicit run), and reports
//! observed orders as successive `log2(e_j / e_{j+1})`. Any energy increase
//! beyond tolerance is a hard failure, not a warning.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::coefficients::{load_scheme, FloatScheme};
use crate::error::{Error, Result};
use crate::flow::{integrate, FlowProblem, ProxOptions, State};
use crate::problems::{Problem, ProblemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorNorm {
    /// `sqrt(sum (u - u*)^2 dx)` with the grid cell weight.
    L2Grid,
    /// Absolute difference (scalar problems).
    Abs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Reference {
    /// Compare against the problem's exact solution.
    Exact,
    /// Compare against the same scheme run at `factor` times the finest
    /// level's step count.
    SelfFine { factor: usize },
    /// Compare against the semi-implicit multistep scheme with `steps` steps.
    SemiImplicitFine { steps: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    /// `builtin:NAME` or a JSON scheme file.
    pub scheme: String,
    pub t_final: f64,
    pub step_counts: Vec<usize>,
    pub norm: ErrorNorm,
    pub reference: Reference,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if self.step_counts.is_empty() {
            return Err(Error::Config("step_counts must not be empty".into()));
        }
        for w in self.step_counts.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config("step_counts must be strictly increasing".into()));
            }
        }
        if !(self.t_final > 0.0) {
            return Err(Error::Config("t_final must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub scheme: String,
    pub problem: String,
    pub t_final: f64,
    pub levels: Vec<usize>,
    pub errors: Vec<f64>,
    /// `orders[j] = log2(errors[j] / errors[j+1])`; empty for single-level runs.
    pub orders: Vec<f64>,
    pub energy_monotone: bool,
    pub wall_times: Vec<f64>,
    /// Per-level energy traces `E(u_n)`, `n = 0..=steps`.
    #[serde(skip_serializing)]
    pub energy_traces: Vec<Vec<f64>>,
}

impl ConvergenceReport {
    /// CSV rows `steps,error,order` (order blank on the first level),
    /// matching the published tables' convention.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("steps,error,order\n");
        for (j, (&steps, &error)) in self.levels.iter().zip(&self.errors).enumerate() {
            if j == 0 {
                let _ = writeln!(out, "{steps},{error:.12e},");
            } else {
                let _ = writeln!(out, "{steps},{error:.12e},{:.6}", self.orders[j - 1]);
            }
        }
        out
    }

    pub fn to_json(&self) -> Value {
        json!({
            "scheme": self.scheme,
            "problem": self.problem,
            "t_final": self.t_final,
            "levels": self.levels,
            "errors": self.errors,
            "orders": self.orders,
            "energy_monotone": self.energy_monotone,
            "wall_times": self.wall_times,
        })
    }
}

/// Observed orders from an error ladder: successive `log2(e_j / e_{j+1})`.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors
        .windows(2)
        .map(|w| (w[0] / w[1]).log2())
        .collect()
}

/// Least-squares slope of `log2(error)` against `log2(steps)`, negated so a
/// first-order method reports ~1.
pub fn regression_order(levels: &[usize], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = levels.iter().map(|&n| (n as f64).log2()).collect();
    let ys: Vec<f64> = errors.iter().map(|&e| e.max(1e-300).log2()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    -(cov / var)
}

fn grid_weight(problem: &Problem) -> f64 {
    match problem.layout() {
        (0, _, _) => 1.0,
        (1, _, _) => match problem {
            Problem::Heat(p) => p.grid().spacing(),
            Problem::AllenCahn1d(p) => p.grid().spacing(),
            _ => 1.0,
        },
        (2, n, l) => (2.0 * l / n as f64).powi(2),
        _ => 1.0,
    }
}

/// Error between two states in the configured norm.
pub fn state_error(problem: &Problem, norm: ErrorNorm, u: &State, reference: &State) -> f64 {
    match norm {
        ErrorNorm::Abs => u
            .iter()
            .zip(reference.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
        ErrorNorm::L2Grid => {
            let dx = grid_weight(problem);
            (dx * u
                .iter()
                .zip(reference.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>())
            .sqrt()
        }
    }
}

/// Build the reference state at `t_final` for the given configuration.
fn reference_state(config: &RunConfig, scheme: &FloatScheme) -> Result<State> {
    let problem = Problem::from_spec(&config.problem)?;
    let u0 = problem.initial_state();
    match &config.reference {
        Reference::Exact => problem.exact_solution(config.t_final).ok_or_else(|| {
            Error::Config(format!(
                "problem '{}' has no exact solution; choose a different reference",
                problem.name()
            ))
        }),
        Reference::SelfFine { factor } => {
            let finest = *config.step_counts.last().unwrap();
            let steps = finest
                .checked_mul(*factor)
                .ok_or_else(|| Error::Config("reference step count overflow".into()))?;
            let k = config.t_final / steps as f64;
            let out = integrate(&problem, scheme, &u0, k, steps, &ProxOptions::default())?;
            ensure_monotone(&out.monotone_violations, out.monotone_tolerance)?;
            Ok(out.final_state)
        }
        Reference::SemiImplicitFine { steps } => {
            let k = config.t_final / *steps as f64;
            problem.semi_implicit(&u0, k, *steps)
        }
    }
}

fn ensure_monotone(violations: &[(usize, f64)], tolerance: f64) -> Result<()> {
    if let Some(&(step, delta)) = violations.first() {
        return Err(Error::EnergyIncrease {
            step,
            delta,
            tolerance,
        });
    }
    Ok(())
}

/// Run the full convergence study described by `config`.
///
/// Levels run concurrently (problems are pure); the report is assembled in
/// level order so output is deterministic.
pub fn run_convergence(config: &RunConfig) -> Result<ConvergenceReport> {
    config.validate()?;
    let gamma = load_scheme(&config.scheme)?;
    let scheme = gamma.to_float();

    let reference = reference_state(config, &scheme)?;

    let level_results: Vec<Result<(f64, Vec<f64>, f64)>> = config
        .step_counts
        .par_iter()
        .map(|&steps| {
            let problem = Problem::from_spec(&config.problem)?;
            let u0 = problem.initial_state();
            let k = config.t_final / steps as f64;
            let started = Instant::now();
            let out = integrate(&problem, &scheme, &u0, k, steps, &ProxOptions::default())?;
            ensure_monotone(&out.monotone_violations, out.monotone_tolerance)?;
            let wall = started.elapsed().as_secs_f64();
            let problem_for_norm = Problem::from_spec(&config.problem)?;
            let error = state_error(&problem_for_norm, config.norm, &out.final_state, &reference);
            Ok((error, out.energies, wall))
        })
        .collect();

    let mut errors = Vec::new();
    let mut traces = Vec::new();
    let mut walls = Vec::new();
    for r in level_results {
        let (e, trace, wall) = r?;
        errors.push(e);
        traces.push(trace);
        walls.push(wall);
    }

    let orders = observed_orders(&errors);
    let problem = Problem::from_spec(&config.problem)?;
    Ok(ConvergenceReport {
        scheme: scheme.name.clone(),
        problem: problem.name().to_string(),
        t_final: config.t_final,
        levels: config.step_counts.clone(),
        errors,
        orders,
        energy_monotone: true,
        wall_times: walls,
        energy_traces: traces,
    })
}

/// Energy trace of a single run: rows `(step, t, energy)` plus the
/// monotonicity verdict.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyTrace {
    pub scheme: String,
    pub problem: String,
    pub steps: usize,
    pub t_final: f64,
    pub rows: Vec<(usize, f64, f64)>,
    pub monotone: bool,
}

impl EnergyTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,t,energy\n");
        for &(step, t, e) in &self.rows {
            let _ = writeln!(out, "{step},{t:.12e},{e:.12e}");
        }
        out
    }

    pub fn to_json(&self) -> Value {
        json!({
            "scheme": self.scheme,
            "problem": self.problem,
            "steps": self.steps,
            "t_final": self.t_final,
            "rows": self.rows,
            "monotone": self.monotone,
        })
    }
}

pub fn run_energy_trace(
    spec: &ProblemSpec,
    scheme_spec: &str,
    t_final: f64,
    steps: usize,
) -> Result<EnergyTrace> {
    let problem = Problem::from_spec(spec)?;
    let gamma = load_scheme(scheme_spec)?;
    let scheme = gamma.to_float();
    let u0 = problem.initial_state();
    let k = t_final / steps as f64;
    let out = integrate(&problem, &scheme, &u0, k, steps, &ProxOptions::default())?;
    let rows = out
        .energies
        .iter()
        .enumerate()
        .map(|(n, &e)| (n, n as f64 * k, e))
        .collect();
    Ok(EnergyTrace {
        scheme: scheme.name.clone(),
        problem: problem.name().to_string(),
        steps,
        t_final,
        rows,
        monotone: out.energy_monotone(),
    })
}

/// State snapshot export: CSV with a `# n=..,l=..,dim=..` header, or a raw
/// little-endian f64 dump prefixed by the same metadata line.
pub fn state_to_csv(problem: &Problem, u: &State) -> String {
    let (dim, n, l) = problem.layout();
    let mut out = format!("# dim={dim},n={n},l={l}\n");
    match dim {
        2 => {
            for row in u.as_slice().unwrap().chunks(n) {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
                let _ = writeln!(out, "{}", cells.join(","));
            }
        }
        _ => {
            for v in u.iter() {
                let _ = writeln!(out, "{v:.12e}");
            }
        }
    }
    out
}

pub fn state_to_binary(problem: &Problem, u: &State) -> Vec<u8> {
    let (dim, n, l) = problem.layout();
    let header = format!("minmov-state dim={dim} n={n} l={l}\n");
    let mut bytes = header.into_bytes();
    for v in u.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ode_config(levels: Vec<usize>) -> RunConfig {
        RunConfig {
            problem: ProblemSpec::named("cosh_ode"),
            scheme: "builtin:second_order_a".into(),
            t_final: 2.0,
            step_counts: levels,
            norm: ErrorNorm::Abs,
            reference: Reference::Exact,
            seed: 0,
        }
    }

    #[test]
    fn order_convention_reproduces_published_row() {
        // Feeding the published error ladder must reproduce its order row.
        let errors = [5.25e-4, 1.31e-4, 3.27e-5, 8.18e-6, 2.05e-6];
        let orders = observed_orders(&errors);
        for o in orders {
            assert!((o - 2.0).abs() < 5e-3, "order {o}");
        }
    }

    #[test]
    fn single_level_report_has_empty_order_row() {
        let report = run_convergence(&ode_config(vec![16])).unwrap();
        assert_eq!(report.levels, vec![16]);
        assert!(report.orders.is_empty());
        let csv = report.to_csv();
        assert!(csv.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn csv_output_is_deterministic() {
        let cfg = ode_config(vec![16, 32, 64]);
        let a = run_convergence(&cfg).unwrap().to_csv();
        let b = run_convergence(&cfg).unwrap().to_csv();
        assert_eq!(a, b);
    }

    #[test]
    fn increasing_levels_required() {
        let mut cfg = ode_config(vec![32, 16]);
        assert!(run_convergence(&cfg).is_err());
        cfg.step_counts = vec![];
        assert!(run_convergence(&cfg).is_err());
    }

    #[test]
    fn exact_reference_requires_exact_solution() {
        let cfg = RunConfig {
            problem: ProblemSpec::with_n("allen_cahn_2d", 16),
            scheme: "builtin:backward_euler".into(),
            t_final: 1.0,
            step_counts: vec![2, 4],
            norm: ErrorNorm::L2Grid,
            reference: Reference::Exact,
            seed: 0,
        };
        assert!(matches!(run_convergence(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn energy_trace_of_fixed_point_is_constant() {
        // constant heat data is a fixed point
        let trace = run_energy_trace(
            &ProblemSpec::with_n("heat", 32),
            "builtin:second_order_a",
            0.125,
            8,
        )
        .unwrap();
        assert!(trace.monotone);
        let e0 = trace.rows[0].2;
        // sin mode decays; just check shape of rows and monotone drop
        assert_eq!(trace.rows.len(), 9);
        assert!(trace.rows.last().unwrap().2 <= e0);
    }

    #[test]
    fn regression_order_of_clean_first_order_data() {
        let levels = [16, 32, 64, 128];
        let errors = [0.08, 0.04, 0.02, 0.01];
        let slope = regression_order(&levels, &errors);
        assert!((slope - 1.0).abs() < 1e-12);
    }
}
