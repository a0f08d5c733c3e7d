//! Time grid, nominal Euler rollout, and the per-stage LQG approximation.
//!
//! Around a nominal trajectory `(x̄, ū)` the deviations obey
//!
//! ```text
//! δx_{k+1} = A_k δx_k + B0_k δu_k + B1_k δu_{k-l} + Σ_j (c_j + C0_j δu_k + C1_j δu_{k-l}) ξ_j
//! cost_k   = q_k + 2 δxᵀ l_x + δxᵀ l_xx δx + 2 δuᵀ l_u + δuᵀ l_uu δu
//! ```
//!
//! with `ξ ~ N(0, I_p)` and zero control history before `k = 0`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::problem::{DelayedSystem, Problem, ProblemError};

/// Tolerance on `tau / dt` being an integer.
const DELAY_RATIO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizationError {
    #[error("invalid grid: {0}")]
    InvalidGrid(&'static str),
    #[error(
        "delay not a multiple of sample period: tau/dt = {ratio} (nearest valid step counts: {suggestions:?})"
    )]
    DelayNotMultiple { ratio: f64, suggestions: Vec<usize> },
    #[error("expected {expected} controls, found {found}")]
    ControlCount { expected: usize, found: usize },
    #[error("state became non-finite at step {step}")]
    Divergence { step: usize },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Uniform grid with `dt = t_f / steps = tau / delay_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    /// `K`
    pub steps: usize,
    /// `l`
    pub delay_steps: usize,
}

impl TimeGrid {
    /// A grid given directly in steps, for problems that are already discrete.
    pub fn new(dt: f64, steps: usize, delay_steps: usize) -> Result<Self, DiscretizationError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DiscretizationError::InvalidGrid("dt must be positive"));
        }
        if steps == 0 {
            return Err(DiscretizationError::InvalidGrid(
                "at least one step is required",
            ));
        }
        if delay_steps == 0 {
            return Err(DiscretizationError::InvalidGrid(
                "delay must span at least one step",
            ));
        }
        Ok(Self {
            dt,
            steps,
            delay_steps,
        })
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Number of pending controls the value function depends on at step `k`:
    /// `min(K - k, l)`.
    pub fn pending(&self, k: usize) -> usize {
        (self.steps - k).min(self.delay_steps)
    }
}

fn delay_ratio_is_integral(t_final: f64, tau: f64, steps: usize) -> Option<usize> {
    let ratio = tau / (t_final / steps as f64);
    let nearest = libm::round(ratio);
    if (ratio - nearest).abs() <= DELAY_RATIO_TOL && nearest >= 1.0 {
        Some(nearest as usize)
    } else {
        None
    }
}

/// Builds the grid `dt = t_f / K`, requiring `tau` to be an integer number of steps.
pub fn build_grid(t_final: f64, tau: f64, steps: usize) -> Result<TimeGrid, DiscretizationError> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(DiscretizationError::InvalidGrid("t_final must be positive"));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(DiscretizationError::InvalidGrid("tau must be positive"));
    }
    if steps == 0 {
        return Err(DiscretizationError::InvalidGrid(
            "at least one step is required",
        ));
    }
    let dt = t_final / steps as f64;
    match delay_ratio_is_integral(t_final, tau, steps) {
        Some(delay_steps) => Ok(TimeGrid {
            dt,
            steps,
            delay_steps,
        }),
        None => {
            let mut suggestions = Vec::new();
            if let Some(below) = (1..steps)
                .rev()
                .find(|&k| delay_ratio_is_integral(t_final, tau, k).is_some())
            {
                suggestions.push(below);
            }
            if let Some(above) = (steps + 1..=steps.saturating_mul(4).max(steps + 64))
                .find(|&k| delay_ratio_is_integral(t_final, tau, k).is_some())
            {
                suggestions.push(above);
            }
            Err(DiscretizationError::DelayNotMultiple {
                ratio: tau / dt,
                suggestions,
            })
        }
    }
}

/// States `x̄_0..x̄_K` and controls `ū_0..ū_{K-1}`; controls before `0` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalTrajectory {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    delay_steps: usize,
    zero: DVector<f64>,
}

impl NominalTrajectory {
    pub fn new(
        states: Vec<DVector<f64>>,
        controls: Vec<DVector<f64>>,
        control_dim: usize,
        delay_steps: usize,
    ) -> Self {
        debug_assert_eq!(states.len(), controls.len() + 1);
        Self {
            states,
            controls,
            delay_steps,
            zero: DVector::zeros(control_dim),
        }
    }

    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn delay_steps(&self) -> usize {
        self.delay_steps
    }

    /// `ū_s`, zero for `s < 0`.
    pub fn control(&self, s: isize) -> &DVector<f64> {
        if s < 0 {
            &self.zero
        } else {
            &self.controls[s as usize]
        }
    }

    /// `ū_{k-l}`.
    pub fn delayed_control(&self, k: usize) -> &DVector<f64> {
        self.control(k as isize - self.delay_steps as isize)
    }
}

/// Euler rollout `x̄_{k+1} = x̄_k + dt f(x̄_k, ū_k, ū_{k-l})` from `x0`.
pub fn rollout_nominal<S: DelayedSystem>(
    problem: &Problem<S>,
    grid: &TimeGrid,
    controls: &[DVector<f64>],
) -> Result<NominalTrajectory, DiscretizationError> {
    if controls.len() != grid.steps {
        return Err(DiscretizationError::ControlCount {
            expected: grid.steps,
            found: controls.len(),
        });
    }
    let d = problem.dims().control;
    let zero = DVector::zeros(d);
    let mut states = Vec::with_capacity(grid.steps + 1);
    states.push(problem.x0.clone());
    for k in 0..grid.steps {
        let delayed = if k >= grid.delay_steps {
            &controls[k - grid.delay_steps]
        } else {
            &zero
        };
        let x = &states[k];
        let next = x + problem.eval_drift(x, &controls[k], delayed)? * grid.dt;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DiscretizationError::Divergence { step: k + 1 });
        }
        states.push(next);
    }
    Ok(NominalTrajectory::new(
        states,
        controls.to_vec(),
        d,
        grid.delay_steps,
    ))
}

/// How the control-dependent diffusion derivatives `C0_j, C1_j` scale with `dt`.
///
/// The offset columns `c_j` always carry `sqrt(dt)`. `SqrtDt` (the default)
/// scales the derivatives the same way, so the linear model is the exact
/// deviation dynamics of the Euler-Maruyama step when the diffusion is affine
/// in the controls. `Printed` scales them by `dt`; the derivative of the noise
/// column then disagrees with how `c_j` itself moves with the nominal control,
/// and the outer loop can stall short of a zero feedforward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseScaling {
    Printed,
    #[default]
    SqrtDt,
}

impl NoiseScaling {
    pub fn derivative_factor(self, dt: f64) -> f64 {
        match self {
            NoiseScaling::Printed => dt,
            NoiseScaling::SqrtDt => libm::sqrt(dt),
        }
    }
}

/// Linearized dynamics of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStage {
    pub a: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    /// `c_j`, one `n`-vector per noise channel.
    pub c: Vec<DVector<f64>>,
    /// `C0_j`, `n×d` each.
    pub c0: Vec<DMatrix<f64>>,
    /// `C1_j`, `n×d` each.
    pub c1: Vec<DMatrix<f64>>,
}

impl LinearStage {
    /// `δx' = A δx + B0 δu + B1 δu_delayed`, no noise.
    pub fn deterministic(a: DMatrix<f64>, b0: DMatrix<f64>, b1: DMatrix<f64>) -> Self {
        Self {
            a,
            b0,
            b1,
            c: Vec::new(),
            c0: Vec::new(),
            c1: Vec::new(),
        }
    }

    pub fn noise_channels(&self) -> usize {
        self.c.len()
    }

    /// Mean of the next deviation state.
    pub fn predict(
        &self,
        dx: &DVector<f64>,
        du: &DVector<f64>,
        du_delayed: &DVector<f64>,
    ) -> DVector<f64> {
        &self.a * dx + &self.b0 * du + &self.b1 * du_delayed
    }

    /// Noise column `j` at the given control deviations.
    pub fn noise_column(
        &self,
        j: usize,
        du: &DVector<f64>,
        du_delayed: &DVector<f64>,
    ) -> DVector<f64> {
        &self.c[j] + &self.c0[j] * du + &self.c1[j] * du_delayed
    }
}

/// Quadratic stage cost in the deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadStage {
    /// Cost at zero deviation.
    pub offset: f64,
    pub lx: DVector<f64>,
    pub lxx: DMatrix<f64>,
    pub lu: DVector<f64>,
    pub luu: DMatrix<f64>,
}

impl QuadStage {
    pub fn evaluate(&self, dx: &DVector<f64>, du: &DVector<f64>) -> f64 {
        self.offset
            + 2.0 * dx.dot(&self.lx)
            + dx.dot(&(&self.lxx * dx))
            + 2.0 * du.dot(&self.lu)
            + du.dot(&(&self.luu * du))
    }
}

/// Conditional covariance of the step noise, `Σ_j g_j g_jᵀ` with
/// `g_j = c_j + C0_j δu + C1_j δu_delayed`.
pub fn stage_noise_covariance(
    stage: &LinearStage,
    du: &DVector<f64>,
    du_delayed: &DVector<f64>,
) -> DMatrix<f64> {
    let n = stage.a.nrows();
    let mut cov = DMatrix::zeros(n, n);
    for j in 0..stage.noise_channels() {
        let g = stage.noise_column(j, du, du_delayed);
        cov += &g * g.transpose();
    }
    cov
}

/// Linearizes the dynamics at `(x̄_k, ū_k, ū_{k-l})`.
pub fn linearize_stage<S: DelayedSystem>(
    problem: &Problem<S>,
    grid: &TimeGrid,
    k: usize,
    traj: &NominalTrajectory,
    scaling: NoiseScaling,
) -> Result<LinearStage, DiscretizationError> {
    assert!(k < grid.steps, "stage index {k} out of range");
    let x = &traj.states[k];
    let u = &traj.controls[k];
    let ud = traj.delayed_control(k);
    let dt = grid.dt;
    let n = problem.dims().state;

    let fj = problem.drift_jacobians(x, u, ud)?;
    let diffusion = problem.eval_diffusion(u, ud)?;
    let gj = problem.diffusion_jacobians(u, ud)?;
    let sqrt_dt = libm::sqrt(dt);
    let factor = scaling.derivative_factor(dt);

    Ok(LinearStage {
        a: DMatrix::identity(n, n) + fj.state * dt,
        b0: fj.control * dt,
        b1: fj.delayed * dt,
        c: diffusion.column_iter().map(|col| col * sqrt_dt).collect(),
        c0: gj.control.into_iter().map(|m| m * factor).collect(),
        c1: gj.delayed.into_iter().map(|m| m * factor).collect(),
    })
}

/// Running cost `dt (xᵀP x + uᵀQ u)` at step `k`.
fn running_cost<S>(
    problem: &Problem<S>,
    grid: &TimeGrid,
    k: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    let t = grid.time(k);
    let p = problem.state_weight.at(t);
    let q = problem.control_weight.at(t);
    grid.dt * (x.dot(&(&p * x)) + u.dot(&(&q * u)))
}

fn terminal_cost<S>(problem: &Problem<S>, x: &DVector<f64>) -> f64 {
    let err = x - &problem.target;
    err.dot(&(&problem.terminal_weight * &err))
}

/// Quadratizes the cost at step `k` (`k = K` gives the terminal stage).
pub fn quadratize_stage<S: DelayedSystem>(
    problem: &Problem<S>,
    grid: &TimeGrid,
    k: usize,
    traj: &NominalTrajectory,
) -> QuadStage {
    assert!(k <= grid.steps, "stage index {k} out of range");
    let x = &traj.states[k];
    let d = problem.dims().control;
    if k == grid.steps {
        let err = x - &problem.target;
        let p = &problem.terminal_weight;
        return QuadStage {
            offset: terminal_cost(problem, x),
            lx: p * &err,
            lxx: p.clone(),
            lu: DVector::zeros(d),
            luu: DMatrix::zeros(d, d),
        };
    }
    let u = &traj.controls[k];
    let t = grid.time(k);
    let p = problem.state_weight.at(t) * grid.dt;
    let q = problem.control_weight.at(t) * grid.dt;
    QuadStage {
        offset: running_cost(problem, grid, k, x, u),
        lx: &p * x,
        lxx: p,
        lu: &q * u,
        luu: q,
    }
}

/// Linearizes all `K` steps and quadratizes all `K + 1` cost stages.
pub fn linearize_all<S: DelayedSystem>(
    problem: &Problem<S>,
    grid: &TimeGrid,
    traj: &NominalTrajectory,
    scaling: NoiseScaling,
) -> Result<(Vec<LinearStage>, Vec<QuadStage>), DiscretizationError> {
    let stages = (0..grid.steps)
        .map(|k| linearize_stage(problem, grid, k, traj, scaling))
        .collect::<Result<Vec<_>, _>>()?;
    let quads = (0..=grid.steps)
        .map(|k| quadratize_stage(problem, grid, k, traj))
        .collect();
    Ok((stages, quads))
}

/// Riemann-sum cost of a trajectory plus the terminal term.
pub fn trajectory_cost<S>(problem: &Problem<S>, grid: &TimeGrid, traj: &NominalTrajectory) -> f64 {
    let running: f64 = (0..grid.steps)
        .map(|k| running_cost(problem, grid, k, &traj.states[k], &traj.controls[k]))
        .sum();
    running + terminal_cost(problem, &traj.states[grid.steps])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::models::LinearSystem;
    use crate::problem::Weight;
    use alloc::vec;

    fn scalar_problem(sys: LinearSystem, p: f64, q: f64) -> Problem<LinearSystem> {
        Problem {
            system: sys,
            tau: 0.2,
            t_final: 0.5,
            x0: DVector::zeros(1),
            target: DVector::zeros(1),
            terminal_weight: DMatrix::identity(1, 1),
            state_weight: Weight::Constant(DMatrix::from_element(1, 1, p)),
            control_weight: Weight::Constant(DMatrix::from_element(1, 1, q)),
        }
    }

    #[test]
    fn grid_exact_multiple() {
        let g = build_grid(1.0, 0.1, 50).unwrap();
        assert_eq!(g.steps, 50);
        assert_eq!(g.delay_steps, 5);
        assert!((g.dt - 0.02).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_fractional_delay() {
        let err = build_grid(1.0, 0.15, 50).unwrap_err();
        match err {
            DiscretizationError::DelayNotMultiple { ratio, suggestions } => {
                assert!((ratio - 7.5).abs() < 1e-12);
                assert_eq!(suggestions, vec![40, 60]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grid_delay_equal_to_horizon() {
        let g = build_grid(0.6, 0.6, 10).unwrap();
        assert_eq!((g.steps, g.delay_steps), (10, 10));
        assert!((g.dt - 0.06).abs() < 1e-15);
        assert_eq!(g.pending(0), 10);
    }

    #[test]
    fn rollout_with_zero_drift_stays_put() {
        let sys = LinearSystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
        );
        let mut p = scalar_problem(sys, 0.0, 1.0);
        p.x0 = DVector::from_element(1, 3.0);
        let g = TimeGrid::new(0.1, 4, 2).unwrap();
        let us = vec![DVector::from_element(1, 1.0); 4];
        let traj = rollout_nominal(&p, &g, &us).unwrap();
        assert!(traj.states.iter().all(|x| x[0] == 3.0));
    }

    #[test]
    fn rollout_respects_delay() {
        // f = u_delayed
        let sys = LinearSystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
        );
        let p = scalar_problem(sys, 0.0, 1.0);
        let g = TimeGrid::new(0.1, 5, 2).unwrap();
        let us = vec![DVector::from_element(1, 1.0); 5];
        let traj = rollout_nominal(&p, &g, &us).unwrap();
        let xs: Vec<f64> = traj.states.iter().map(|x| x[0]).collect();
        let expected = [0.0, 0.0, 0.0, 0.1, 0.2, 0.3];
        for (a, b) in xs.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15, "{xs:?}");
        }
        assert_eq!(traj.control(-1), &DVector::zeros(1));
        assert_eq!(traj.delayed_control(1), &DVector::zeros(1));
    }

    #[test]
    fn rollout_matches_closed_form_linear_recurrence() {
        // x_{k+1} = M x_k + dt(B0 u_k + B1 u_{k-l}) with M = I + dt A; closed form
        // x_k = M^k x0 + Σ_j M^{k-1-j} dt (B0 u_j + B1 u_{j-l}).
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.3]);
        let b0 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let b1 = DMatrix::from_column_slice(2, 1, &[0.5, 0.0]);
        let sys = LinearSystem::new(a.clone(), b0.clone(), b1.clone());
        let mut p = scalar_problem(sys, 0.0, 1.0);
        p.x0 = DVector::from_vec(vec![1.0, -0.5]);
        p.terminal_weight = DMatrix::identity(2, 2);
        p.target = DVector::zeros(2);
        let g = TimeGrid::new(0.05, 12, 3).unwrap();
        let us: Vec<DVector<f64>> = (0..12)
            .map(|k| DVector::from_element(1, libm::sin(k as f64)))
            .collect();
        let traj = rollout_nominal(&p, &g, &us).unwrap();
        let m = DMatrix::identity(2, 2) + &a * g.dt;
        let zero = DVector::zeros(1);
        for k in 0..=12 {
            let mut x = m.pow(k as u32) * &p.x0;
            for j in 0..k {
                let ud = if j >= 3 { &us[j - 3] } else { &zero };
                let drive = (&b0 * &us[j] + &b1 * ud) * g.dt;
                x += m.pow((k - 1 - j) as u32) * drive;
            }
            assert!((&x - &traj.states[k]).amax() < 1e-12);
        }
    }

    #[test]
    fn rollout_reports_divergence() {
        let sys = LinearSystem::new(
            DMatrix::from_element(1, 1, 1e300),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
        );
        let mut p = scalar_problem(sys, 0.0, 1.0);
        p.x0 = DVector::from_element(1, 1e300);
        let g = TimeGrid::new(1.0, 3, 1).unwrap();
        let err = rollout_nominal(&p, &g, &vec![DVector::zeros(1); 3]).unwrap_err();
        assert_eq!(err, DiscretizationError::Divergence { step: 1 });
    }

    #[test]
    fn linearize_zero_model() {
        let sys = LinearSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 1),
        );
        let mut p = scalar_problem(sys, 0.0, 1.0);
        p.x0 = DVector::zeros(2);
        let g = TimeGrid::new(0.1, 3, 1).unwrap();
        let traj = rollout_nominal(&p, &g, &vec![DVector::zeros(1); 3]).unwrap();
        let s = linearize_stage(&p, &g, 0, &traj, NoiseScaling::Printed).unwrap();
        assert_eq!(s.a, DMatrix::identity(2, 2));
        assert_eq!(s.b0, DMatrix::zeros(2, 1));
        assert_eq!(s.b1, DMatrix::zeros(2, 1));
        assert_eq!(s.noise_channels(), 0);
    }

    #[test]
    fn linearize_linear_model_is_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let b1 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let sys = LinearSystem::new(a.clone(), b0.clone(), b1.clone());
        let mut p = scalar_problem(sys, 0.0, 1.0);
        p.x0 = DVector::from_vec(vec![0.5, 0.1]);
        let g = TimeGrid::new(0.01, 4, 2).unwrap();
        let traj = rollout_nominal(&p, &g, &vec![DVector::from_vec(vec![0.3, -0.2]); 4]).unwrap();
        let s = linearize_stage(&p, &g, 2, &traj, NoiseScaling::Printed).unwrap();
        assert!(max_abs_diff(&s.a, &(DMatrix::identity(2, 2) + &a * 0.01)) < 1e-15);
        assert!(max_abs_diff(&s.b0, &(&b0 * 0.01)) < 1e-15);
        assert!(max_abs_diff(&s.b1, &(&b1 * 0.01)) < 1e-15);
    }

    #[test]
    fn linearize_signal_dependent_noise() {
        // F(u, u_d) = 0.5 u, ū = 2, dt = 0.04: c = 0.2·1 = 0.2, C0 = 0.04·0.5 = 0.02.
        let sys = LinearSystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
        )
        .with_noise(
            DMatrix::zeros(1, 1),
            vec![DMatrix::from_element(1, 1, 0.5)],
            vec![DMatrix::zeros(1, 1)],
        );
        let p = scalar_problem(sys, 0.0, 1.0);
        let g = TimeGrid::new(0.04, 2, 1).unwrap();
        let traj = rollout_nominal(&p, &g, &vec![DVector::from_element(1, 2.0); 2]).unwrap();
        let s = linearize_stage(&p, &g, 0, &traj, NoiseScaling::Printed).unwrap();
        assert!((s.c[0][0] - 0.2).abs() < 1e-15);
        assert!((s.c0[0][(0, 0)] - 0.02).abs() < 1e-15);
        assert_eq!(s.c1[0][(0, 0)], 0.0);

        let s = linearize_stage(&p, &g, 0, &traj, NoiseScaling::SqrtDt).unwrap();
        assert!((s.c0[0][(0, 0)] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn covariance_of_single_column() {
        let stage = LinearStage {
            c: vec![DVector::from_vec(vec![1.0, 0.0])],
            c0: vec![DMatrix::zeros(2, 1)],
            c1: vec![DMatrix::zeros(2, 1)],
            ..LinearStage::deterministic(
                DMatrix::identity(2, 2),
                DMatrix::zeros(2, 1),
                DMatrix::zeros(2, 1),
            )
        };
        let cov =
            stage_noise_covariance(&stage, &DVector::from_element(1, 4.0), &DVector::zeros(1));
        assert_eq!(cov, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let empty = LinearStage::deterministic(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 1),
        );
        assert_eq!(
            stage_noise_covariance(&empty, &DVector::zeros(1), &DVector::zeros(1)),
            DMatrix::zeros(2, 2)
        );
    }

    #[test]
    fn quadratize_running_and_terminal() {
        let sys = LinearSystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
        );
        let mut p = scalar_problem(sys, 2.0, 3.0);
        p.x0 = DVector::from_element(1, 1.0);
        let g = TimeGrid::new(0.1, 2, 1).unwrap();
        let traj = rollout_nominal(&p, &g, &vec![DVector::from_element(1, -1.0); 2]).unwrap();
        let q = quadratize_stage(&p, &g, 0, &traj);
        // d̃ = 0.1(2 + 3), d = 0.1·2·1, e = 0.1·3·(-1)
        assert!((q.offset - 0.5).abs() < 1e-15);
        assert!((q.lx[0] - 0.2).abs() < 1e-15);
        assert!((q.lu[0] + 0.3).abs() < 1e-15);
        assert!((q.lxx[(0, 0)] - 0.2).abs() < 1e-15);
        assert!((q.luu[(0, 0)] - 0.3).abs() < 1e-15);

        p.target = DVector::from_element(1, 1.0);
        let t = quadratize_stage(&p, &g, 2, &traj);
        assert_eq!(t.offset, 0.0);
        assert_eq!(t.lx, DVector::zeros(1));
        assert_eq!(t.lxx, DMatrix::identity(1, 1));
        assert_eq!(t.lu, DVector::zeros(1));
        assert_eq!(t.luu, DMatrix::zeros(1, 1));
    }

    #[test]
    fn quadratized_offsets_sum_to_trajectory_cost() {
        let sys = LinearSystem::new(
            DMatrix::from_element(1, 1, -0.4),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
        );
        let mut p = scalar_problem(sys, 1.5, 0.7);
        p.x0 = DVector::from_element(1, 0.3);
        p.target = DVector::from_element(1, 1.0);
        let g = TimeGrid::new(0.05, 10, 4).unwrap();
        let us: Vec<_> = (0..10)
            .map(|k| DVector::from_element(1, 0.1 * k as f64))
            .collect();
        let traj = rollout_nominal(&p, &g, &us).unwrap();
        let (_, quads) = linearize_all(&p, &g, &traj, NoiseScaling::Printed).unwrap();
        let summed: f64 = quads.iter().map(|q| q.offset).sum();
        assert_eq!(summed, trajectory_cost(&p, &g, &traj));
    }
}
