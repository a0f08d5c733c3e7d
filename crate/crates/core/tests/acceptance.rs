//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use delay_ilqr::backward::{run_backward, Policy};
use delay_ilqr::discretization::{linearize_all, NoiseScaling};
use delay_ilqr::forward::stochastic_simulate;
use delay_ilqr::oracle::instances::{Instance, InstanceKind};
use delay_ilqr::oracle::moments::moment_propagation_cost;
use delay_ilqr::oracle::verify::{check_instance, perturbation_audit, InstanceReport};
use delay_ilqr::{solve, DVector, DelayedSystem, Problem, SolveOptions};

use common::{pendulum_problem, random_linear_problem, reach_problem};

type Criterion<'a> = Box<dyn FnOnce() -> Outcome + 'a>;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn max_of<F: Fn(&InstanceReport) -> f64>(reports: &[InstanceReport], f: F) -> f64 {
    reports.iter().map(f).fold(0.0, f64::max)
}

fn min_of<F: Fn(&InstanceReport) -> f64>(reports: &[InstanceReport], f: F) -> f64 {
    reports.iter().map(f).fold(f64::INFINITY, f64::min)
}

fn suite(kind: InstanceKind, base: u64, count: u64) -> Vec<InstanceReport> {
    (0..count)
        .map(|i| check_instance(&Instance::random(base + i, kind), &run_backward))
        .collect()
}

fn errors(reports: &[InstanceReport]) -> usize {
    reports.iter().filter(|r| r.error.is_some()).count()
}

fn oracle_triangle(reports: &[InstanceReport], seconds: f64) -> Outcome {
    let gain = max_of(reports, |r| r.gain_deviation);
    let cost = max_of(reports, |r| r.cost_deviation);
    let controls = max_of(reports, |r| r.control_deviation);
    outcome(
        errors(reports) == 0 && gain <= 1e-8 && cost <= 1e-8 && controls <= 1e-8 && seconds <= 10.0,
        format!(
            "{} instances, max gain dev {gain:.2e}, max cost rel dev {cost:.2e}, max open-loop control dev {controls:.2e}, {seconds:.2}s",
            reports.len()
        ),
    )
}

fn noisy_agreement(reports: &[InstanceReport]) -> Outcome {
    let value = max_of(reports, |r| r.value_deviation);
    let gain = max_of(reports, |r| r.gain_deviation);
    let cost = max_of(reports, |r| r.cost_deviation);
    outcome(
        errors(reports) == 0 && value <= 1e-8 && gain <= 1e-8 && cost <= 1e-8,
        format!(
            "{} instances, max value dev {value:.2e}, max gain dev {gain:.2e}, max J(0) vs moments rel dev {cost:.2e}",
            reports.len()
        ),
    )
}

fn appendix_invariants(reports: &[InstanceReport]) -> Outcome {
    let margin = min_of(reports, |r| r.hessian_margin);
    let gamma = min_of(reports, |r| r.gamma_ratio);
    outcome(
        errors(reports) == 0 && margin >= 0.0 && gamma >= -1e-8,
        format!(
            "{} instances, min H margin {margin:.2e}, min eig(Γ)/‖Γ‖ {gamma:.2e}",
            reports.len()
        ),
    )
}

fn delay_free_reduction(reports: &[InstanceReport]) -> Outcome {
    let gain = max_of(reports, |r| r.gain_deviation);
    let value = max_of(reports, |r| r.value_deviation);
    let zero = reports.iter().all(|r| r.zero_delay_blocks);
    outcome(
        errors(reports) == 0 && gain <= 1e-10 && value <= 1e-10 && zero,
        format!(
            "{} instances, max gain dev {gain:.2e}, max value dev {value:.2e}, delay blocks exactly zero: {zero}",
            reports.len()
        ),
    )
}

/// Stages and policy of a converged solve, as an oracle instance.
fn converged_instance(
    seed: u64,
    problem: &Problem<impl DelayedSystem>,
) -> Option<(Instance, Policy)> {
    let sol = solve(problem, 20, None, &SolveOptions::default()).ok()?;
    if !sol.converged() {
        return None;
    }
    let instance = Instance {
        seed,
        kind: InstanceKind::Noisy,
        grid: sol.grid,
        stages: sol.stages,
        quads: sol.quads,
    };
    Some((instance, sol.plan.policy))
}

fn local_optimality() -> Outcome {
    let mut worst = f64::INFINITY;
    let mut violations = 0;
    let mut unconverged = 0;
    for seed in 0..10 {
        let problem = random_linear_problem(500 + seed, true, 20);
        let Some((instance, policy)) = converged_instance(seed, &problem) else {
            unconverged += 1;
            continue;
        };
        let (base, delta) = perturbation_audit(&instance, &policy, 20, 1e-3, seed);
        let slack = 1e-12 * base.abs().max(1.0);
        if delta < -slack {
            violations += 1;
        }
        worst = worst.min(delta);
    }
    outcome(
        violations == 0 && unconverged == 0,
        format!("10 converged instances x 20 perturbations of 1e-3, smallest cost change {worst:.3e}, {violations} decreases, {unconverged} unconverged"),
    )
}

fn lq_one_shot() -> Outcome {
    let mut worst_rel = 0.0_f64;
    let mut max_iters = 0;
    let mut failures = 0;
    for seed in 0..10 {
        let problem = random_linear_problem(700 + seed, false, 20);
        match solve(&problem, 20, None, &SolveOptions::default()) {
            Ok(sol) => {
                let s0 = sol.plan.policy.expected_cost();
                let rel = (sol.cost - s0).abs() / s0.abs().max(f64::MIN_POSITIVE);
                worst_rel = worst_rel.max(rel);
                max_iters = max_iters.max(sol.reports.len());
                if !sol.converged() {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    outcome(
        failures == 0 && max_iters <= 2 && worst_rel <= 1e-8,
        format!("10 LQ problems, max iterations {max_iters}, max |cost - s̃0|/|s̃0| {worst_rel:.2e}, {failures} failures"),
    )
}

fn nonlinear_run<S: DelayedSystem>(name: &str, problem: &Problem<S>) -> (bool, String) {
    let start = Instant::now();
    let result = solve(problem, 50, None, &SolveOptions::default());
    let seconds = start.elapsed().as_secs_f64();
    match result {
        Ok(sol) => {
            let monotone = sol.reports.windows(2).all(|w| w[1].cost <= w[0].cost);
            let ff = sol.plan.policy.feedforward_norm();
            let ok = monotone && ff <= 1e-6 && seconds <= 5.0 && sol.converged();
            (
                ok,
                format!(
                    "{name}: {} iterations, stop {}, monotone {monotone}, final |ι| {ff:.2e}, {seconds:.3}s",
                    sol.reports.len(),
                    sol.stop.as_str()
                ),
            )
        }
        Err(e) => (false, format!("{name}: {e}")),
    }
}

fn nonlinear_descent() -> Outcome {
    let (a, da) = nonlinear_run("reach", &reach_problem());
    let (b, db) = nonlinear_run("pendulum", &pendulum_problem());
    outcome(a && b, format!("{da}; {db}"))
}

fn monte_carlo() -> Outcome {
    const TRIALS: usize = 100_000;
    let results: Vec<Result<(f64, f64, f64, usize), String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..5u64)
            .map(|i| {
                scope.spawn(move || {
                    let problem = random_linear_problem(900 + i, true, 20);
                    let sol = solve(&problem, 20, None, &SolveOptions::default())
                        .map_err(|e| e.to_string())?;
                    let (stages, quads) =
                        linearize_all(&problem, &sol.grid, &sol.plan.nominal, NoiseScaling::SqrtDt)
                            .map_err(|e| e.to_string())?;
                    let exact =
                        moment_propagation_cost(&stages, &quads, &sol.grid, &sol.plan.policy.gains);
                    let stats =
                        stochastic_simulate(&problem, &sol.grid, &sol.plan, TRIALS, 2024 + i)
                            .map_err(|e| e.to_string())?;
                    Ok((stats.mean, stats.stderr, exact, stats.divergences))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut passed = true;
    let mut parts = Vec::new();
    for r in results {
        match r {
            Ok((mean, stderr, exact, divergences)) => {
                let z = (mean - exact) / stderr;
                passed &= z.abs() <= 4.0 && divergences == 0;
                parts.push(format!("z={z:+.2}"));
            }
            Err(e) => {
                passed = false;
                parts.push(format!("error {e}"));
            }
        }
    }
    outcome(
        passed,
        format!("5 instances x {TRIALS} trials: {}", parts.join(" ")),
    )
}

/// Residual of the one-step linear prediction at perturbation scale `h`.
fn prediction_residual<S: DelayedSystem>(
    problem: &Problem<S>,
    x: &DVector<f64>,
    u: &DVector<f64>,
    ud: &DVector<f64>,
    dir: (&DVector<f64>, &DVector<f64>, &DVector<f64>),
    dt: f64,
    h: f64,
) -> f64 {
    let jac = problem.drift_jacobians(x, u, ud).unwrap();
    let (dx, du, dud) = (dir.0 * h, dir.1 * h, dir.2 * h);
    let base = x + problem.eval_drift(x, u, ud).unwrap() * dt;
    let moved = (x + &dx)
        + problem
            .eval_drift(&(x + &dx), &(u + &du), &(ud + &dud))
            .unwrap()
            * dt;
    let predicted = &dx + (&jac.state * &dx + &jac.control * &du + &jac.delayed * &dud) * dt;
    (moved - base - predicted).norm()
}

fn linearization_order() -> Outcome {
    let pendulum = pendulum_problem();
    let x = DVector::from_vec(vec![0.7, -0.4]);
    let u = DVector::from_element(1, 0.3);
    let ud = DVector::from_element(1, -0.2);
    let dir_x = DVector::from_vec(vec![0.8, 0.5]);
    let dir_u = DVector::from_element(1, 0.6);
    let dir_ud = DVector::from_element(1, -0.9);
    let dt = 0.02;
    let mut ratios = Vec::new();
    let mut h = 0.2;
    let mut prev = prediction_residual(&pendulum, &x, &u, &ud, (&dir_x, &dir_u, &dir_ud), dt, h);
    for _ in 0..4 {
        h *= 0.5;
        let r = prediction_residual(&pendulum, &x, &u, &ud, (&dir_x, &dir_u, &dir_ud), dt, h);
        ratios.push(prev / r);
        prev = r;
    }
    let pendulum_ok = ratios.iter().all(|r| *r >= 3.5);

    let reach = reach_problem();
    let reach_residual =
        prediction_residual(&reach, &x, &u, &ud, (&dir_x, &dir_u, &dir_ud), dt, 0.2);
    let reach_ok = reach_residual <= 1e-12;
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    outcome(
        pendulum_ok && reach_ok,
        format!(
            "pendulum residual ratios per halving [{}]; reach drift is affine, residual {reach_residual:.1e}",
            shown.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let deterministic = suite(InstanceKind::Deterministic, 10_000, 50);
    let triangle_seconds = start.elapsed().as_secs_f64();
    let noisy = suite(InstanceKind::Noisy, 20_000, 50);
    let delay_free = suite(InstanceKind::DelayFree, 30_000, 20);
    let combined: Vec<InstanceReport> = deterministic.iter().chain(&noisy).cloned().collect();

    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        (
            "oracle triangle (deterministic)",
            Box::new(|| oracle_triangle(&deterministic, triangle_seconds)),
        ),
        (
            "oracle agreement (multiplicative noise)",
            Box::new(|| noisy_agreement(&noisy)),
        ),
        (
            "H positivity and Γ nonnegativity",
            Box::new(|| appendix_invariants(&combined)),
        ),
        (
            "delay-free reduction",
            Box::new(|| delay_free_reduction(&delay_free)),
        ),
        ("local optimality", Box::new(local_optimality)),
        ("LQ one-shot convergence", Box::new(lq_one_shot)),
        ("nonlinear descent", Box::new(nonlinear_descent)),
        ("Monte Carlo consistency", Box::new(monte_carlo)),
        ("linearization order", Box::new(linearization_order)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let o = run();
        if !o.passed {
            failed += 1;
        }
        println!(
            "criterion {} [{name}]: {} ({})",
            i + 1,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
