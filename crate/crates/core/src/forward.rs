//! Closed-loop rollouts, the line search, the outer iLQR loop, and
//! Euler-Maruyama simulation of the delayed policy.
//!
//! The policy acts on deviations from a nominal trajectory:
//!
//! ```text
//! u_k = ū_k + α ι_k + L_k (x_k - x̄_k) + Σ_i M_k^i δu_{k+i-l},   δu_s = u_s - ū_s, δu_{s<0} = 0
//! ```
//!
//! The line search compares the local model's expected cost of a nominal
//! under its optimal feedback, `s̃_0 + Σ_k ι_kᵀ H_k ι_k`. Without noise this
//! equals the rollout cost of the nominal; with control-dependent noise it
//! adds the variance penalty that `ι` is trading against.

use alloc::boxed::Box;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::backward::{run_backward_with, BackwardError, Policy};
use crate::discretization::{
    build_grid, linearize_all, rollout_nominal, trajectory_cost, DiscretizationError, LinearStage,
    NoiseScaling, NominalTrajectory, QuadStage, TimeGrid,
};
use crate::linalg::Regularization;
use crate::problem::{DelayedSystem, Problem, ValidationReport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Relative cost change counted as a stall.
    pub cost_tolerance: f64,
    /// Consecutive stalled iterations that stop the loop.
    pub stall_iterations: usize,
    /// Stop once every `|ι_k|` entry is at most this.
    pub feedforward_tolerance: f64,
    /// Smallest line-search step tried.
    pub min_step: f64,
    pub regularization: Regularization,
    pub noise_scaling: NoiseScaling,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            cost_tolerance: 1e-6,
            stall_iterations: 2,
            feedforward_tolerance: 1e-8,
            min_step: 1.0 / 1024.0,
            regularization: Regularization::default(),
            noise_scaling: NoiseScaling::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    FeedforwardSmall,
    CostStalled,
    IterationCap,
    NoImprovement,
}

impl StopReason {
    pub fn converged(self) -> bool {
        matches!(self, StopReason::FeedforwardSmall | StopReason::CostStalled)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::FeedforwardSmall => "feedforward_small",
            StopReason::CostStalled => "cost_stalled",
            StopReason::IterationCap => "iteration_cap",
            StopReason::NoImprovement => "no_improvement",
        }
    }
}

/// One accepted iteration of the outer loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationReport {
    /// 1-based.
    pub iteration: usize,
    /// Line-search merit of the accepted nominal.
    pub cost: f64,
    /// Deterministic rollout cost of the accepted nominal.
    pub deterministic_cost: f64,
    pub step_alpha: f64,
    /// Largest `|ι|` entry of the policy that produced this step.
    pub grad_norm: f64,
    pub converged: bool,
}

/// The LQG approximation around a nominal together with its optimal policy.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub nominal: NominalTrajectory,
    pub stages: Vec<LinearStage>,
    pub quads: Vec<QuadStage>,
    pub policy: Policy,
    /// Rollout cost of the nominal.
    pub cost: f64,
    /// `s̃_0 + Σ ιᵀ H ι`.
    pub merit: f64,
}

/// A policy rooted at the nominal it was computed on.
#[derive(Debug, Clone)]
pub struct Plan {
    pub nominal: NominalTrajectory,
    pub policy: Policy,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub grid: TimeGrid,
    pub plan: Plan,
    pub stages: Vec<LinearStage>,
    pub quads: Vec<QuadStage>,
    pub reports: Vec<IterationReport>,
    pub stop: StopReason,
    /// Deterministic rollout cost of the final nominal.
    pub cost: f64,
    /// Merit of the final nominal.
    pub merit: f64,
}

impl Solution {
    pub fn converged(&self) -> bool {
        self.stop.converged()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveErrorKind {
    #[error("problem validation failed: {0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
    #[error(transparent)]
    Backward(#[from] BackwardError),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{kind}")]
pub struct SolveError {
    pub kind: SolveErrorKind,
    /// Iterations completed before the failure.
    pub reports: Vec<IterationReport>,
}

impl<E: Into<SolveErrorKind>> From<E> for SolveError {
    fn from(e: E) -> Self {
        Self {
            kind: e.into(),
            reports: Vec::new(),
        }
    }
}

/// Builds the LQG approximation around `nominal` and solves it.
pub fn local_model<S: DelayedSystem>(
    problem: &Problem<S>,
    grid: &TimeGrid,
    nominal: NominalTrajectory,
    options: &SolveOptions,
) -> Result<LocalModel, SolveErrorKind> {
    let (stages, quads) = linearize_all(problem, grid, &nominal, options.noise_scaling)?;
    let policy = run_backward_with(&stages, &quads, grid, &options.regularization)?;
    let excess: f64 = policy
        .gains
        .iter()
        .map(|g| g.feedforward.dot(&(&g.hessian * &g.feedforward)))
        .sum();
    let merit = policy.expected_cost() + excess;
    let cost = trajectory_cost(problem, grid, &nominal);
    Ok(LocalModel {
        nominal,
        stages,
        quads,
        policy,
        cost,
        merit,
    })
}

/// Steps the policy through the nonlinear Euler(-Maruyama) dynamics.
/// `noise(k)` returns `ξ_k`, or `None` for a deterministic step.
fn rollout_with<S, N>(
    problem: &Problem<S>,
    grid: &TimeGrid,
    plan: &Plan,
    alpha: f64,
    mut noise: N,
) -> Result<NominalTrajectory, DiscretizationError>
where
    S: DelayedSystem,
    N: FnMut(usize) -> Option<DVector<f64>>,
{
    let nominal = &plan.nominal;
    let gains = &plan.policy.gains;
    let l = grid.delay_steps;
    let d = problem.dims().control;
    let zero = DVector::zeros(d);
    let sqrt_dt = libm::sqrt(grid.dt);

    let mut states = Vec::with_capacity(grid.steps + 1);
    let mut controls: Vec<DVector<f64>> = Vec::with_capacity(grid.steps);
    let mut deviations: Vec<DVector<f64>> = Vec::with_capacity(grid.steps);
    states.push(problem.x0.clone());
    for k in 0..grid.steps {
        let g = &gains[k];
        let x = &states[k];
        let dx = x - &nominal.states[k];
        let mut du = &g.feedforward * alpha + &g.feedback * &dx;
        for (i, m) in g.taps.iter().enumerate() {
            // Tap i multiplies δu_{k+i-l}.
            if let Some(s) = (k + i).checked_sub(l) {
                du += m * &deviations[s];
            }
        }
        let u = &nominal.controls[k] + &du;
        let delayed = if k >= l { &controls[k - l] } else { &zero };
        let mut next = x + problem.eval_drift(x, &u, delayed)? * grid.dt;
        if let Some(xi) = noise(k) {
            next += problem.eval_diffusion(&u, delayed)? * xi * sqrt_dt;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DiscretizationError::Divergence { step: k + 1 });
        }
        states.push(next);
        controls.push(u);
        deviations.push(du);
    }
    Ok(NominalTrajectory::new(states, controls, d, l))
}

/// Deterministic closed-loop rollout with the feedforward scaled by `alpha`.
/// Returns the trajectory and its cost.
pub fn closed_loop_rollout<S: DelayedSystem>(
    problem: &Problem<S>,
    grid: &TimeGrid,
    plan: &Plan,
    alpha: f64,
) -> Result<(NominalTrajectory, f64), DiscretizationError> {
    let traj = rollout_with(problem, grid, plan, alpha, |_| None)?;
    let cost = trajectory_cost(problem, grid, &traj);
    Ok((traj, cost))
}

/// Outcome of a line search.
#[derive(Debug, Clone)]
pub enum LineSearch {
    Accepted { model: Box<LocalModel>, alpha: f64 },
    NoImprovement,
}

/// Backtracks `alpha = 1, 1/2, …` down to `min_step`, accepting the first
/// candidate whose merit is below `merit_prev - 1e-12 |merit_prev|`.
/// Divergent rollouts and failed backward passes count as infinite merit.
pub fn line_search<S: DelayedSystem>(
    problem: &Problem<S>,
    grid: &TimeGrid,
    plan: &Plan,
    merit_prev: f64,
    options: &SolveOptions,
) -> LineSearch {
    let threshold = merit_prev - 1e-12 * merit_prev.abs();
    let mut alpha = 1.0;
    while alpha >= options.min_step {
        if let Ok(traj) = rollout_with(problem, grid, plan, alpha, |_| None) {
            if let Ok(model) = local_model(problem, grid, traj, options) {
                if model.merit < threshold {
                    return LineSearch::Accepted {
                        model: Box::new(model),
                        alpha,
                    };
                }
            }
        }
        alpha *= 0.5;
    }
    LineSearch::NoImprovement
}

/// Runs iLQR from `init_controls` (zeros when `None`) on a `steps`-step grid.
pub fn solve<S: DelayedSystem>(
    problem: &Problem<S>,
    steps: usize,
    init_controls: Option<&[DVector<f64>]>,
    options: &SolveOptions,
) -> Result<Solution, SolveError> {
    let report = problem.validate();
    if !report.passed() {
        return Err(SolveErrorKind::Invalid(report).into());
    }
    let grid = build_grid(problem.t_final, problem.tau, steps)?;
    let d = problem.dims().control;
    let controls = match init_controls {
        Some(c) => c.to_vec(),
        None => alloc::vec![DVector::zeros(d); steps],
    };
    let nominal = rollout_nominal(problem, &grid, &controls)?;
    let model = local_model(problem, &grid, nominal, options)?;
    iterate(problem, grid, model, options)
}

/// The outer loop from an already-solved local model.
pub fn iterate<S: DelayedSystem>(
    problem: &Problem<S>,
    grid: TimeGrid,
    mut model: LocalModel,
    options: &SolveOptions,
) -> Result<Solution, SolveError> {
    let mut reports: Vec<IterationReport> = Vec::new();
    let mut stalled = 0;
    let stop = loop {
        let grad_norm = model.policy.feedforward_norm();
        if grad_norm <= options.feedforward_tolerance {
            break StopReason::FeedforwardSmall;
        }
        if stalled >= options.stall_iterations {
            break StopReason::CostStalled;
        }
        if reports.len() >= options.max_iterations {
            break StopReason::IterationCap;
        }
        let plan = Plan {
            nominal: model.nominal.clone(),
            policy: model.policy.clone(),
        };
        match line_search(problem, &grid, &plan, model.merit, options) {
            LineSearch::NoImprovement => break StopReason::NoImprovement,
            LineSearch::Accepted { model: next, alpha } => {
                let change = (model.merit - next.merit).abs();
                if change <= options.cost_tolerance * next.merit.abs().max(1.0) {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
                reports.push(IterationReport {
                    iteration: reports.len() + 1,
                    cost: next.merit,
                    deterministic_cost: next.cost,
                    step_alpha: alpha,
                    grad_norm,
                    converged: false,
                });
                model = *next;
            }
        }
    };
    if let Some(last) = reports.last_mut() {
        last.converged = stop.converged();
    }
    let LocalModel {
        nominal,
        stages,
        quads,
        policy,
        cost,
        merit,
    } = model;
    Ok(Solution {
        grid,
        plan: Plan { nominal, policy },
        stages,
        quads,
        reports,
        stop,
        cost,
        merit,
    })
}

/// Outcome of one simulated trial.
#[derive(Debug, Clone, PartialEq)]
pub enum Trial {
    Finished { cost: f64, terminal: DVector<f64> },
    Diverged { step: usize },
}

/// Simulates one noisy trial. The noise stream is `ChaCha8(seed)` on stream
/// `trial`, so results depend only on `(seed, trial)`.
pub fn simulate_trial<S: DelayedSystem>(
    problem: &Problem<S>,
    grid: &TimeGrid,
    plan: &Plan,
    seed: u64,
    trial: u64,
) -> Result<Trial, DiscretizationError> {
    let p = problem.dims().noise;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let noise = |_k: usize| {
        Some(DVector::from_fn(p, |_, _| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        }))
    };
    match rollout_with(problem, grid, plan, 1.0, noise) {
        Ok(traj) => Ok(Trial::Finished {
            cost: trajectory_cost(problem, grid, &traj),
            terminal: traj.states[grid.steps].clone(),
        }),
        Err(DiscretizationError::Divergence { step }) => Ok(Trial::Diverged { step }),
        Err(e) => Err(e),
    }
}

/// Sample statistics over trials; divergent trials are excluded from the moments.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationStats {
    pub trials: usize,
    pub finished: usize,
    pub divergences: usize,
    pub mean: f64,
    /// Standard error of the mean; NaN with fewer than two finished trials.
    pub stderr: f64,
    /// Terminal states of finished trials, in trial order.
    pub terminal_states: Vec<DVector<f64>>,
}

impl SimulationStats {
    /// Folds trial outcomes (in trial order) with Welford's update.
    pub fn from_trials<I: IntoIterator<Item = Trial>>(trials: I) -> Self {
        let mut count = 0usize;
        let mut finished = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        let mut terminal_states = Vec::new();
        for t in trials {
            count += 1;
            if let Trial::Finished { cost, terminal } = t {
                finished += 1;
                let delta = cost - mean;
                mean += delta / finished as f64;
                m2 += delta * (cost - mean);
                terminal_states.push(terminal);
            }
        }
        let stderr = if finished >= 2 {
            libm::sqrt(m2 / (finished - 1) as f64 / finished as f64)
        } else {
            f64::NAN
        };
        Self {
            trials: count,
            finished,
            divergences: count - finished,
            mean: if finished > 0 { mean } else { f64::NAN },
            stderr,
            terminal_states,
        }
    }
}

/// Runs `trials` Euler-Maruyama trials sequentially.
pub fn stochastic_simulate<S: DelayedSystem>(
    problem: &Problem<S>,
    grid: &TimeGrid,
    plan: &Plan,
    trials: usize,
    seed: u64,
) -> Result<SimulationStats, DiscretizationError> {
    let outcomes = (0..trials as u64)
        .map(|t| simulate_trial(problem, grid, plan, seed, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SimulationStats::from_trials(outcomes))
}

/// `d×n` zero feedback and no taps: plays `controls` open loop.
pub fn open_loop_plan(nominal: NominalTrajectory, grid: &TimeGrid, state_dim: usize) -> Plan {
    use crate::backward::StageGains;
    let d = nominal.controls.first().map(|u| u.len()).unwrap_or(0);
    let gains = (0..grid.steps)
        .map(|_| StageGains {
            feedforward: DVector::zeros(d),
            feedback: DMatrix::zeros(d, state_dim),
            taps: Vec::new(),
            hessian: DMatrix::zeros(d, d),
            shift: 0.0,
        })
        .collect();
    Plan {
        nominal,
        policy: Policy {
            grid: *grid,
            gains,
            value: Vec::new(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LinearSystem, PendulumModel, ReachModel};
    use crate::problem::Weight;
    use alloc::vec;

    fn reach_problem(noise: f64) -> Problem<ReachModel> {
        Problem {
            system: ReachModel {
                noise,
                ..ReachModel::default()
            },
            tau: 0.1,
            t_final: 0.5,
            x0: DVector::zeros(2),
            target: DVector::from_vec(vec![0.1, 0.0]),
            terminal_weight: DMatrix::from_diagonal(&DVector::from_vec(vec![1e3, 1e2])),
            state_weight: Weight::Constant(DMatrix::zeros(2, 2)),
            control_weight: Weight::Constant(DMatrix::identity(1, 1) * 1e-2),
        }
    }

    fn lq_problem() -> Problem<LinearSystem> {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.2]),
            DMatrix::from_column_slice(2, 1, &[0.0, 0.5]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        );
        Problem {
            system: sys,
            tau: 0.2,
            t_final: 1.0,
            x0: DVector::from_vec(vec![0.3, -0.1]),
            target: DVector::from_vec(vec![1.0, 0.0]),
            terminal_weight: DMatrix::identity(2, 2) * 10.0,
            state_weight: Weight::Constant(DMatrix::identity(2, 2)),
            control_weight: Weight::Constant(DMatrix::identity(1, 1) * 0.1),
        }
    }

    #[test]
    fn zero_alpha_reproduces_nominal() {
        let problem = pendulum();
        let grid = build_grid(problem.t_final, problem.tau, 20).unwrap();
        let controls: Vec<_> = (0..20)
            .map(|k| DVector::from_element(1, 0.1 * k as f64))
            .collect();
        let nominal = rollout_nominal(&problem, &grid, &controls).unwrap();
        let model =
            local_model(&problem, &grid, nominal.clone(), &SolveOptions::default()).unwrap();
        let plan = Plan {
            nominal: nominal.clone(),
            policy: model.policy,
        };
        let (traj, cost) = closed_loop_rollout(&problem, &grid, &plan, 0.0).unwrap();
        assert_eq!(traj.states, nominal.states);
        assert_eq!(traj.controls, nominal.controls);
        assert_eq!(cost, trajectory_cost(&problem, &grid, &nominal));
    }

    fn pendulum() -> Problem<PendulumModel> {
        Problem {
            system: PendulumModel::default(),
            tau: 0.1,
            t_final: 1.0,
            x0: DVector::from_vec(vec![0.5, 0.0]),
            target: DVector::zeros(2),
            terminal_weight: DMatrix::identity(2, 2) * 10.0,
            state_weight: Weight::Constant(DMatrix::identity(2, 2)),
            control_weight: Weight::Constant(DMatrix::identity(1, 1) * 0.1),
        }
    }

    #[test]
    fn merit_equals_rollout_cost_without_noise() {
        let problem = lq_problem();
        let grid = build_grid(problem.t_final, problem.tau, 20).unwrap();
        let controls = vec![DVector::from_element(1, 0.4); 20];
        let nominal = rollout_nominal(&problem, &grid, &controls).unwrap();
        let model = local_model(&problem, &grid, nominal, &SolveOptions::default()).unwrap();
        assert!((model.merit - model.cost).abs() <= 1e-12 * model.cost.abs());
    }

    #[test]
    fn lq_problem_converges_in_one_step() {
        let problem = lq_problem();
        let sol = solve(&problem, 20, None, &SolveOptions::default()).unwrap();
        assert!(sol.converged());
        assert_eq!(sol.reports.len(), 1);
        assert_eq!(sol.reports[0].step_alpha, 1.0);
        let s0 = sol.plan.policy.expected_cost();
        assert!((sol.cost - s0).abs() <= 1e-8 * s0.abs());
    }

    #[test]
    fn lq_optimum_is_independent_of_initial_guess() {
        let problem = lq_problem();
        let init: Vec<_> = (0..20)
            .map(|k| DVector::from_element(1, 0.05 * (k as f64).sin()))
            .collect();
        let a = solve(&problem, 20, None, &SolveOptions::default()).unwrap();
        let b = solve(&problem, 20, Some(&init), &SolveOptions::default()).unwrap();
        assert!((a.cost - b.cost).abs() <= 1e-9 * a.cost.abs().max(1.0));
    }

    #[test]
    fn reach_costs_do_not_increase() {
        let problem = reach_problem(0.2);
        let sol = solve(&problem, 50, None, &SolveOptions::default()).unwrap();
        assert!(sol.reports.windows(2).all(|w| w[1].cost <= w[0].cost));
    }

    #[test]
    fn noiseless_simulation_matches_rollout() {
        let problem = reach_problem(0.0);
        let sol = solve(&problem, 50, None, &SolveOptions::default()).unwrap();
        let grid = sol.grid;
        let stats = stochastic_simulate(&problem, &grid, &sol.plan, 16, 7).unwrap();
        let (_, cost) = closed_loop_rollout(&problem, &grid, &sol.plan, 1.0).unwrap();
        assert_eq!(stats.mean, cost);
        assert_eq!(stats.stderr, 0.0);
        assert_eq!(stats.divergences, 0);
    }

    #[test]
    fn simulation_is_reproducible() {
        let problem = reach_problem(0.2);
        let sol = solve(&problem, 50, None, &SolveOptions::default()).unwrap();
        let a = stochastic_simulate(&problem, &sol.grid, &sol.plan, 64, 11).unwrap();
        let b = stochastic_simulate(&problem, &sol.grid, &sol.plan, 64, 11).unwrap();
        assert_eq!(a, b);
        let c = stochastic_simulate(&problem, &sol.grid, &sol.plan, 64, 12).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn welford_handles_divergent_trials() {
        let stats = SimulationStats::from_trials(vec![
            Trial::Finished {
                cost: 1.0,
                terminal: DVector::zeros(1),
            },
            Trial::Diverged { step: 3 },
            Trial::Finished {
                cost: 3.0,
                terminal: DVector::zeros(1),
            },
        ]);
        assert_eq!(stats.trials, 3);
        assert_eq!(stats.divergences, 1);
        assert_eq!(stats.mean, 2.0);
        assert!((stats.stderr - 1.0).abs() < 1e-15);
    }
}
