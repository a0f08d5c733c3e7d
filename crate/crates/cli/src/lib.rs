//! Batch front end for the delay-aware iLQR solver: `solve`, `simulate`
//! and `verify` commands driven by a TOML run configuration.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use delay_ilqr::backward::BackwardError;
use delay_ilqr::forward::{simulate_trial, SolveErrorKind};
use delay_ilqr::oracle::instances::{Instance, InstanceKind};
use delay_ilqr::oracle::verify::{check_instance, VerifyReport};
use delay_ilqr::{
    run_backward, solve, DelayedSystem, LinearStage, Policy, QuadStage, SimulationStats, TimeGrid,
};
use rayon::prelude::*;

pub mod artifacts;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{Category, CliError};

use artifacts::{PolicyFile, SimulationRecord, Summary};
use config::DynProblem;

/// Variable naming the output directory when neither `--out` nor
/// `output.directory` is given.
pub const OUTPUT_ENV: &str = "DELAY_ILQR_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "delay-ilqr",
    version,
    about = "iLQR for systems with delayed, noisy control inputs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a policy and write the trajectory, gains, iteration log and summary.
    Solve(RunArgs),
    /// Run Monte Carlo trials of a saved policy.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Gains file written by `solve`.
        #[arg(long)]
        policy: PathBuf,
    },
    /// Cross-check the backward recursion against the reference solvers.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override a config field, e.g. `--set solver.max_iterations=20`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of seeds; each is checked as a deterministic, a noisy and a delay-free instance.
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A backward pass that can be shared across threads.
pub type SharedBackward =
    dyn Fn(&[LinearStage], &[QuadStage], &TimeGrid) -> Result<Policy, BackwardError> + Sync;

/// Runs one command and returns the text to print on success.
pub fn run(cli: Cli, env_out: Option<&Path>) -> Result<String, CliError> {
    match cli.command {
        Command::Solve(args) => run_solve(&args, env_out),
        Command::Simulate { run, policy } => run_simulate(&run, &policy, env_out),
        Command::Verify(args) => run_verify(&args, env_out, &run_backward),
    }
}

fn validated(config: &RunConfig) -> Result<(DynProblem, TimeGrid), CliError> {
    let problem = config.problem()?;
    let report = problem.validate();
    if !report.passed() {
        let failures: Vec<String> = report
            .failures()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect();
        return Err(CliError::validation(failures.join("; ")));
    }
    Ok((problem, config.grid()?))
}

pub fn run_solve(args: &RunArgs, env_out: Option<&Path>) -> Result<String, CliError> {
    let config = RunConfig::load(&args.config, &args.overrides)?;
    let (problem, grid) = validated(&config)?;
    let dir = config.output_dir(args.out.as_deref(), env_out);

    let solution =
        solve(&problem, grid.steps, None, &config.solver.options()).map_err(|e| match e.kind {
            SolveErrorKind::Invalid(r) => CliError::validation(r.to_string()),
            other => CliError::solver(format!(
                "{other} (after {} accepted iterations)",
                e.reports.len()
            )),
        })?;

    let dims = problem.dims();
    let labels = (
        problem.system.state_labels(),
        problem.system.control_labels(),
    );
    artifacts::write_file(
        &dir,
        artifacts::TRAJECTORY,
        &artifacts::trajectory_csv(&solution.grid, &solution.plan.nominal, &labels.0, &labels.1),
    )?;
    artifacts::write_file(
        &dir,
        artifacts::GAINS,
        &PolicyFile::of(&solution.plan, dims.state, dims.control).to_toml(),
    )?;
    artifacts::write_file(
        &dir,
        artifacts::ITERATIONS,
        &artifacts::iterations_csv(&solution.reports),
    )?;
    let summary = Summary::of(&solution);
    artifacts::write_file(
        &dir,
        artifacts::SUMMARY,
        &toml::to_string(&summary).expect("summary serializes"),
    )?;
    Ok(format!(
        "solve: cost {:e}, expected cost {:e}, {} iterations, {} ({}), output in {}",
        summary.final_cost,
        summary.expected_cost,
        summary.iterations,
        if summary.converged {
            "converged"
        } else {
            "not converged"
        },
        summary.stop_reason,
        dir.display()
    ))
}

/// Trials run in parallel; each draws from its own `(seed, trial)` stream
/// and results are folded in trial order.
pub fn simulate_parallel<S: DelayedSystem + Sync>(
    problem: &delay_ilqr::Problem<S>,
    grid: &TimeGrid,
    plan: &delay_ilqr::Plan,
    trials: usize,
    seed: u64,
) -> Result<SimulationStats, CliError> {
    let outcomes = (0..trials as u64)
        .into_par_iter()
        .map(|t| simulate_trial(problem, grid, plan, seed, t))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::solver(format!("simulation failed: {e}")))?;
    Ok(SimulationStats::from_trials(outcomes))
}

pub fn run_simulate(
    args: &RunArgs,
    policy: &Path,
    env_out: Option<&Path>,
) -> Result<String, CliError> {
    let config = RunConfig::load(&args.config, &args.overrides)?;
    let (problem, grid) = validated(&config)?;
    let dims = problem.dims();
    let plan = PolicyFile::read(policy)?.plan(&grid, dims.state, dims.control)?;
    let dir = config.output_dir(args.out.as_deref(), env_out);

    let sim = config.simulation;
    let stats = simulate_parallel(&problem, &grid, &plan, sim.trials, sim.seed)?;
    let record = SimulationRecord::of(&stats, sim.seed);
    artifacts::write_file(
        &dir,
        artifacts::SIMULATION,
        &toml::to_string(&record).expect("record serializes"),
    )?;
    if sim.terminal_states {
        artifacts::write_file(
            &dir,
            artifacts::TERMINAL_STATES,
            &artifacts::terminal_states_csv(&stats, &problem.system.state_labels()),
        )?;
    }
    Ok(format!(
        "simulate: {} trials, mean cost {:e} ± {:e}, {} diverged, output in {}",
        record.trials,
        record.mean_cost,
        record.stderr,
        record.divergences,
        dir.display()
    ))
}

/// The instance suite of `verify`, checked in parallel and reported in
/// seed order.
pub fn verify_instances(seed: u64, count: usize, backward: &SharedBackward) -> VerifyReport {
    let kinds = [
        InstanceKind::Deterministic,
        InstanceKind::Noisy,
        InstanceKind::DelayFree,
    ];
    let instances = (0..count as u64)
        .into_par_iter()
        .flat_map_iter(|i| {
            let s = seed.wrapping_add(i);
            kinds
                .into_iter()
                .map(move |kind| check_instance(&Instance::random(s, kind), backward))
        })
        .collect();
    VerifyReport { instances }
}

pub fn run_verify(
    args: &VerifyArgs,
    env_out: Option<&Path>,
    backward: &SharedBackward,
) -> Result<String, CliError> {
    let report = verify_instances(args.seed, args.count, backward);
    let dir = config::resolve_output(args.out.as_deref(), None, env_out);
    artifacts::write_file(&dir, artifacts::VERIFY, &artifacts::verify_csv(&report))?;
    if !report.passed() {
        let seeds: Vec<String> = report.failing_seeds().iter().map(u64::to_string).collect();
        return Err(CliError::solver(format!(
            "verification failed for seeds {} (report in {})",
            seeds.join(", "),
            dir.join(artifacts::VERIFY).display()
        )));
    }
    Ok(format!(
        "verify: {} instances passed, report in {}",
        report.instances.len(),
        dir.join(artifacts::VERIFY).display()
    ))
}
