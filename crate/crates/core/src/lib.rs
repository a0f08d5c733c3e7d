//! Iterative LQR for nonlinear stochastic systems whose control input acts
//! after a fixed delay and whose noise scales with the control signal.
//!
//! The solver repeatedly linearizes the dynamics and quadratizes the cost
//! around a nominal trajectory, solves the resulting delayed LQG problem with
//! a backward recursion over the state and the pending (not yet applied)
//! controls, and rolls the affine policy out on the nonlinear system.
//!
//! Module map:
//!
//! * [`problem`] - continuous-time problem definition, validation, Jacobians.
//! * [`discretization`] - time grid, Euler rollout, per-stage LQG coefficients.
//! * [`backward`] - the delay-aware backward recursion and its audits.
//! * [`forward`] - closed-loop rollout, line search, the outer loop, Monte Carlo.
//! * [`oracle`] - independent reference solvers used to check the recursion.
//! * [`models`] - ready-made example systems.
//!
//! The crate is `no_std` and only needs `alloc`.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backward;
pub mod discretization;
pub mod forward;
pub mod linalg;
pub mod models;
pub mod oracle;
pub mod problem;

pub use backward::{run_backward, Policy, StageGains, ValueCoeffs};
pub use discretization::{
    build_grid, linearize_all, rollout_nominal, LinearStage, NoiseScaling, NominalTrajectory,
    QuadStage, TimeGrid,
};
pub use forward::{
    closed_loop_rollout, solve, stochastic_simulate, IterationReport, Plan, SimulationStats,
    Solution, SolveError, SolveOptions, StopReason,
};
pub use problem::{DelayedSystem, Dims, Problem, ValidationReport, Weight};

pub use nalgebra::{DMatrix, DVector};
