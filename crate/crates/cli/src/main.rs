//! Command-line front end. Exit codes: 0 success, 2 rejected plan or bad
//! arguments, 3 runtime failure (including any failed row of a sweep).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use holelab_cli::config::{build_plan, FileConfig, Overrides, Plan, PlanError};
use holelab_cli::pipeline::{
    run_gap, run_plan, run_qsd, run_simulate, run_stationary, SimRun,
};
use holelab_cli::report::{self, Sidecar};

#[derive(Parser)]
#[command(
    name = "holelab",
    version,
    about = "Spectral and Monte Carlo observables of noisy expanding maps with a contracting hole"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stationary density of the full noisy transfer operator.
    Stationary(CommonArgs),
    /// Quasi-stationary density and survival eigenvalue of the operator
    /// conditioned on avoiding the hole.
    Qsd(CommonArgs),
    /// Reachable set of the hole under the noisy dynamics, step by step,
    /// until it re-enters the hole.
    Gap(CommonArgs),
    /// Lyapunov exponent (and its gap to the unperturbed value) over a
    /// parameter sweep.
    Lyapunov(CommonArgs),
    /// Full observable table over a parameter sweep.
    Sweep(CommonArgs),
    /// Monte Carlo occupation histogram, optionally with killing at the
    /// hole.
    Simulate(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file; flags below override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// doubling | tent | doubling-flat | tent-flat | doubling-sink
    #[arg(long)]
    map: Option<String>,
    /// Noise half-width: scalar, comma list, 'geom:a:b:n', or 'lin:a:b:n'.
    #[arg(long)]
    sigma: Option<String>,
    /// Hole radius; same forms as --sigma. Defaults to 0 (no hole).
    #[arg(long)]
    delta: Option<String>,
    /// Grid cells: a number, a comma list, or 'auto'.
    #[arg(long)]
    grid: Option<String>,
    /// RNG seed: a number or a comma list.
    #[arg(long)]
    seed: Option<String>,
    /// How lists combine: 'product' (default) or 'zip'.
    #[arg(long)]
    pairing: Option<String>,
    /// Output file; stdout when omitted.
    #[arg(short, long, value_name = "PATH")]
    output: Option<PathBuf>,
    /// Power-iteration residual target.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Also compute resolvent-norm and operator-difference diagnostics.
    #[arg(long)]
    diagnostics: bool,
    /// Recorded steps per particle (simulate).
    #[arg(long)]
    steps: Option<u64>,
    /// Discarded steps per particle before recording (simulate).
    #[arg(long)]
    burn_in: Option<u64>,
    /// Ensemble size (simulate).
    #[arg(long)]
    particles: Option<usize>,
    /// Kill particles that enter the hole and resample from survivors.
    #[arg(long)]
    kill: bool,
    /// Write the solved operator as row,col,value triplets (stationary/qsd).
    #[arg(long, value_name = "PATH")]
    export_matrix: Option<PathBuf>,
}

impl CommonArgs {
    fn plan(&self) -> Result<Plan, PlanError> {
        let file = match &self.config {
            Some(path) => FileConfig::from_path(path)?,
            None => FileConfig::default(),
        };
        let overrides = Overrides {
            map: self.map.clone(),
            sigma: self.sigma.clone(),
            delta: self.delta.clone(),
            grid: self.grid.clone(),
            seed: self.seed.clone(),
            pairing: self.pairing.clone(),
            output: self.output.clone(),
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            diagnostics: self.diagnostics,
            steps: self.steps,
            burn_in: self.burn_in,
            particles: self.particles,
            kill: self.kill,
            export_matrix: self.export_matrix.clone(),
        };
        build_plan(file, &overrides)
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let (label, args) = match &cli.command {
        Command::Stationary(a) => ("stationary", a),
        Command::Qsd(a) => ("qsd", a),
        Command::Gap(a) => ("gap", a),
        Command::Lyapunov(a) => ("lyapunov", a),
        Command::Sweep(a) => ("sweep", a),
        Command::Simulate(a) => ("simulate", a),
    };
    let plan = match args.plan().and_then(|p| check_plan_shape(label, p)) {
        Ok(plan) => plan,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    match dispatch(label, &plan) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Plan(e)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(RunError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

/// Shape constraints that depend on the subcommand, enforced before
/// anything runs.
fn check_plan_shape(label: &str, plan: Plan) -> Result<Plan, PlanError> {
    if plan.export_matrix.is_some() && !matches!(label, "stationary" | "qsd") {
        return Err(PlanError(format!(
            "--export-matrix applies to `stationary` and `qsd`, not `{label}`"
        )));
    }
    if plan.sim.kill && label != "simulate" {
        return Err(PlanError(format!(
            "--kill applies to `simulate`, not `{label}`"
        )));
    }
    Ok(plan)
}

enum RunError {
    Plan(PlanError),
    Runtime(String),
}

impl From<PlanError> for RunError {
    fn from(e: PlanError) -> Self {
        RunError::Plan(e)
    }
}

impl From<anyhow::Error> for RunError {
    fn from(e: anyhow::Error) -> Self {
        RunError::Runtime(format!("{e:#}"))
    }
}

fn runtime(msg: String) -> RunError {
    RunError::Runtime(msg)
}

fn dispatch(label: &str, plan: &Plan) -> Result<(), RunError> {
    match label {
        "stationary" | "qsd" => {
            let pt = plan.single_point(label)?;
            let run = if label == "stationary" {
                run_stationary(plan.map, pt, &plan.solver, plan.export_matrix.is_some())
            } else {
                run_qsd(plan.map, pt, &plan.solver, plan.export_matrix.is_some())
            }
            .map_err(runtime)?;
            report::write_density(plan.output.as_deref(), &run.grid, &run.values)?;
            if let (Some(path), Some(entries)) = (&plan.export_matrix, &run.matrix) {
                report::write_matrix_triplets(path, entries)?;
            }
            if let Some(out) = &plan.output {
                let mut meta = Sidecar::new(
                    label,
                    plan.map.label().to_string(),
                    pt.sigma,
                    pt.delta,
                    Some(run.grid.len()),
                    pt.seed,
                );
                meta.eigenvalue = Some(run.eigenvalue);
                meta.residual = Some(run.residual);
                meta.iterations = Some(run.iterations);
                report::write_sidecar(out, &meta)?;
            }
            Ok(())
        }
        "gap" => {
            let pt = plan.single_point(label)?;
            let run = run_gap(plan.map, pt).map_err(runtime)?;
            report::write_gap(plan.output.as_deref(), &run.intervals)?;
            log::info!(
                "gap time {} step(s){}",
                run.steps,
                if run.cap_hit { " (cap hit)" } else { "" }
            );
            if let Some(out) = &plan.output {
                let mut meta = Sidecar::new(
                    label,
                    plan.map.label().to_string(),
                    pt.sigma,
                    pt.delta,
                    None,
                    pt.seed,
                );
                meta.gap_steps = Some(run.steps);
                meta.cap_hit = Some(run.cap_hit);
                report::write_sidecar(out, &meta)?;
            }
            Ok(())
        }
        "simulate" => {
            let pt = plan.single_point(label)?;
            let (grid, run) = run_simulate(plan.map, pt, plan.sim).map_err(runtime)?;
            let values = match &run {
                SimRun::Histogram(h) => h.density.values(),
                SimRun::Killed(k) => k.density.values(),
            };
            report::write_density(plan.output.as_deref(), &grid, values)?;
            if let Some(out) = &plan.output {
                let mut meta = Sidecar::new(
                    label,
                    plan.map.label().to_string(),
                    pt.sigma,
                    pt.delta,
                    Some(grid.len()),
                    pt.seed,
                );
                meta.steps = Some(plan.sim.steps);
                meta.burn_in = Some(plan.sim.burn_in);
                meta.particles = Some(plan.sim.particles);
                meta.kill = Some(plan.sim.kill);
                match &run {
                    SimRun::Histogram(h) => {
                        meta.coverage = Some(h.coverage);
                        meta.non_ergodic_suspect = Some(h.non_ergodic_suspect);
                        meta.total_samples = Some(h.total_samples);
                    }
                    SimRun::Killed(k) => {
                        meta.escape_rate = Some(k.escape_rate);
                        meta.kills = Some(k.kills);
                        meta.total_samples = Some(k.total_samples);
                    }
                }
                report::write_sidecar(out, &meta)?;
            }
            Ok(())
        }
        "sweep" | "lyapunov" => {
            let rows = run_plan(plan);
            if label == "sweep" {
                report::write_rows(plan.output.as_deref(), &rows)?;
            } else {
                report::write_lyapunov_rows(plan.output.as_deref(), &rows)?;
            }
            let failures: Vec<&str> = rows
                .iter()
                .filter_map(|r| r.error.as_deref())
                .collect();
            if failures.is_empty() {
                Ok(())
            } else {
                Err(runtime(format!(
                    "{} of {} point(s) failed; first: {}",
                    failures.len(),
                    rows.len(),
                    failures[0]
                )))
            }
        }
        _ => unreachable!("unknown subcommand label"),
    }
}
