//! Cross-checks of a backward-pass implementation against the reference solvers.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backward::{assemble_gamma, audit_positivity, BackwardError, Policy, StageGains};
use crate::discretization::{LinearStage, QuadStage, TimeGrid};
use crate::linalg;
use crate::oracle::augmented::augmented_riccati;
use crate::oracle::batch::batch_quadratic_solve;
use crate::oracle::instances::{Instance, InstanceKind};
use crate::oracle::lqr::delay_free_lqr;
use crate::oracle::moments::{linear_closed_loop, moment_propagation_cost};

/// Gain agreement with the augmented recursion (max-abs).
pub const GAIN_TOL: f64 = 1e-8;
/// Value agreement with the augmented recursion, relative to `max(1, max |V|)`.
pub const VALUE_TOL: f64 = 1e-8;
/// Relative agreement of optimal or expected costs.
pub const COST_TOL: f64 = 1e-8;
/// Agreement with the delay-free recursion.
pub const DELAY_FREE_TOL: f64 = 1e-10;
/// Floor on `min_eig(Γ) / ‖Γ‖`.
pub const GAMMA_TOL: f64 = 1e-8;

/// A backward-pass implementation under test.
pub type BackwardFn<'a> =
    &'a dyn Fn(&[LinearStage], &[QuadStage], &TimeGrid) -> Result<Policy, BackwardError>;

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceReport {
    pub seed: u64,
    pub kind: InstanceKind,
    /// `(n, d, p, l, K)`
    pub dims: (usize, usize, usize, usize, usize),
    /// Gains versus the reference recursion.
    pub gain_deviation: f64,
    /// Value coefficients versus the reference recursion (relative).
    pub value_deviation: f64,
    /// Optimal or expected cost versus the batch solve or moment propagation (relative).
    pub cost_deviation: f64,
    /// Open-loop controls versus the batch solve (deterministic instances only).
    pub control_deviation: f64,
    pub hessian_margin: f64,
    pub gamma_ratio: f64,
    /// Delay blocks are exactly zero (delay-free instances only).
    pub zero_delay_blocks: bool,
    pub error: Option<String>,
}

impl InstanceReport {
    pub fn passed(&self) -> bool {
        if self.error.is_some() {
            return false;
        }
        let gain_tol = match self.kind {
            InstanceKind::DelayFree => DELAY_FREE_TOL,
            _ => GAIN_TOL,
        };
        let value_tol = match self.kind {
            InstanceKind::DelayFree => DELAY_FREE_TOL,
            _ => VALUE_TOL,
        };
        self.gain_deviation <= gain_tol
            && self.value_deviation <= value_tol
            && self.cost_deviation <= COST_TOL
            && self.control_deviation <= GAIN_TOL
            && self.hessian_margin >= 0.0
            && self.gamma_ratio >= -GAMMA_TOL
            && self.zero_delay_blocks
    }

    fn failed(instance: &Instance, error: String) -> Self {
        let mut r = Self::empty(instance);
        r.error = Some(error);
        r
    }

    fn empty(instance: &Instance) -> Self {
        Self {
            seed: instance.seed,
            kind: instance.kind,
            dims: (
                instance.state_dim(),
                instance.control_dim(),
                instance.noise_dim(),
                instance.grid.delay_steps,
                instance.grid.steps,
            ),
            gain_deviation: 0.0,
            value_deviation: 0.0,
            cost_deviation: 0.0,
            control_deviation: 0.0,
            hessian_margin: f64::INFINITY,
            gamma_ratio: f64::INFINITY,
            zero_delay_blocks: true,
            error: None,
        }
    }
}

impl fmt::Display for InstanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (n, d, p, l, k) = self.dims;
        write!(
            f,
            "seed={} kind={} n={n} d={d} p={p} l={l} K={k} gain={:.3e} value={:.3e} cost={:.3e} controls={:.3e} h_margin={:.3e} gamma={:.3e} {}",
            self.seed,
            self.kind.as_str(),
            self.gain_deviation,
            self.value_deviation,
            self.cost_deviation,
            self.control_deviation,
            self.hessian_margin,
            self.gamma_ratio,
            if self.passed() { "pass" } else { "FAIL" }
        )?;
        if let Some(e) = &self.error {
            write!(f, " error=\"{e}\"")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub instances: Vec<InstanceReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.instances.iter().all(InstanceReport::passed)
    }

    /// Seeds of failing instances, without duplicates, in order.
    pub fn failing_seeds(&self) -> Vec<u64> {
        let mut seeds: Vec<u64> = Vec::new();
        for r in self.instances.iter().filter(|r| !r.passed()) {
            if !seeds.contains(&r.seed) {
                seeds.push(r.seed);
            }
        }
        seeds
    }
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn scaled_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    linalg::max_abs_diff(a, b) / linalg::max_abs(b).max(1.0)
}

fn gains_deviation(ours: &StageGains, theirs: &StageGains) -> f64 {
    let mut dev = linalg::max_abs_diff(&ours.feedback, &theirs.feedback);
    dev = dev.max((&ours.feedforward - &theirs.feedforward).amax());
    if ours.taps.len() != theirs.taps.len() {
        return f64::INFINITY;
    }
    for (a, b) in ours.taps.iter().zip(&theirs.taps) {
        dev = dev.max(linalg::max_abs_diff(a, b));
    }
    dev
}

fn shape_error(policy: &Policy, grid: &TimeGrid) -> Option<String> {
    if policy.gains.len() != grid.steps || policy.value.len() != grid.steps + 1 {
        return Some(format!(
            "policy has {} gains and {} values for K = {}",
            policy.gains.len(),
            policy.value.len(),
            grid.steps
        ));
    }
    None
}

/// Runs every applicable cross-check on one instance.
pub fn check_instance(instance: &Instance, backward: BackwardFn<'_>) -> InstanceReport {
    let grid = &instance.grid;
    let (stages, quads) = (&instance.stages[..], &instance.quads[..]);
    let policy = match backward(stages, quads, grid) {
        Ok(p) => p,
        Err(e) => return InstanceReport::failed(instance, format!("{e}")),
    };
    if let Some(e) = shape_error(&policy, grid) {
        return InstanceReport::failed(instance, e);
    }
    let mut report = InstanceReport::empty(instance);
    let audit = audit_positivity(&policy, quads);
    report.hessian_margin = audit.hessian_margin;
    report.gamma_ratio = audit.gamma_ratio;

    if instance.kind == InstanceKind::DelayFree {
        let reference = match delay_free_lqr(stages, quads, grid) {
            Ok(r) => r,
            Err(e) => return InstanceReport::failed(instance, format!("reference: {e}")),
        };
        for k in 0..grid.steps {
            let g = &policy.gains[k];
            let dev = linalg::max_abs_diff(&g.feedback, &reference.feedback[k])
                .max((&g.feedforward - &reference.feedforward[k]).amax());
            report.gain_deviation = report.gain_deviation.max(dev);
            report.zero_delay_blocks &= g.taps.iter().all(|m| m.iter().all(|v| *v == 0.0));
        }
        for k in 0..=grid.steps {
            let v = &policy.value[k];
            let scale = linalg::max_abs(&reference.vxx[k])
                .max(reference.vx[k].amax())
                .max(reference.offset[k].abs())
                .max(1.0);
            let dev = linalg::max_abs_diff(&v.vxx, &reference.vxx[k])
                .max((&v.vx - &reference.vx[k]).amax())
                .max((v.offset - reference.offset[k]).abs());
            report.value_deviation = report.value_deviation.max(dev / scale);
            report.zero_delay_blocks &= v.vw.iter().all(|r| r.iter().all(|x| *x == 0.0))
                && v.vxw.iter().all(|r| r.iter().all(|x| *x == 0.0))
                && v.vww.iter().flatten().all(|r| r.iter().all(|x| *x == 0.0));
        }
        return report;
    }

    let reference = match augmented_riccati(stages, quads, grid) {
        Ok(r) => r,
        Err(e) => return InstanceReport::failed(instance, format!("reference: {e}")),
    };
    let d = instance.control_dim();
    for k in 0..grid.steps {
        let pending = grid.pending(k);
        let unfolded = reference.unfolded(k, pending);
        let mut dev = gains_deviation(&policy.gains[k], &unfolded);
        // Register slots beyond the horizon must carry no gain.
        let beyond = reference.unfolded(k, grid.delay_steps);
        for m in &beyond.taps[pending..] {
            dev = dev.max(linalg::max_abs(m));
        }
        report.gain_deviation = report.gain_deviation.max(dev);
    }
    for k in 0..=grid.steps {
        let gamma = assemble_gamma(&policy.value[k], grid, d);
        report.value_deviation = report
            .value_deviation
            .max(scaled_diff(&gamma, &reference.values[k]));
    }

    let j0 = policy.expected_cost();
    match instance.kind {
        InstanceKind::Deterministic => match batch_quadratic_solve(stages, quads, grid) {
            Some(batch) => {
                report.cost_deviation = relative(j0, batch.cost);
                let (controls, _) = linear_closed_loop(stages, quads, grid, &policy.gains);
                report.control_deviation = controls
                    .iter()
                    .zip(&batch.controls)
                    .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).amax()));
            }
            None => report.error = Some(String::from("batch Hessian not positive definite")),
        },
        _ => {
            let expected = moment_propagation_cost(stages, quads, grid, &policy.gains);
            report.cost_deviation = relative(j0, expected);
        }
    }
    report
}

/// Checks `count` seeds starting at `seed`, each as a deterministic, a noisy,
/// and a delay-free instance.
pub fn verify_suite(seed: u64, count: usize, backward: BackwardFn<'_>) -> VerifyReport {
    let mut instances = Vec::with_capacity(3 * count);
    for i in 0..count as u64 {
        let s = seed.wrapping_add(i);
        for kind in [
            InstanceKind::Deterministic,
            InstanceKind::Noisy,
            InstanceKind::DelayFree,
        ] {
            instances.push(check_instance(&Instance::random(s, kind), backward));
        }
    }
    VerifyReport { instances }
}

/// Perturbs one random gain entry at a time by `±magnitude` and returns the
/// smallest `cost(perturbed) - cost(policy)` seen over `count` trials, with
/// costs from moment propagation.
pub fn perturbation_audit(
    instance: &Instance,
    policy: &Policy,
    count: usize,
    magnitude: f64,
    seed: u64,
) -> (f64, f64) {
    let (stages, quads, grid) = (&instance.stages[..], &instance.quads[..], &instance.grid);
    let base = moment_propagation_cost(stages, quads, grid, &policy.gains);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..count {
        let mut gains = policy.gains.clone();
        let k = rng.random_range(0..gains.len());
        let g = &mut gains[k];
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let d = g.feedforward.len();
        let n = g.feedback.ncols();
        let entries = d + d * n + g.taps.len() * d * d;
        let mut e = rng.random_range(0..entries);
        if e < d {
            g.feedforward[e] += sign * magnitude;
        } else {
            e -= d;
            if e < d * n {
                g.feedback[e] += sign * magnitude;
            } else {
                e -= d * n;
                g.taps[e / (d * d)][e % (d * d)] += sign * magnitude;
            }
        }
        let cost = moment_propagation_cost(stages, quads, grid, &gains);
        worst = worst.min(cost - base);
    }
    (base, worst)
}
