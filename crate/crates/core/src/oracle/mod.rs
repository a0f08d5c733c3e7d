//! Reference solvers for checking the delayed backward recursion.
//!
//! None of these reuse the recursion itself; they share only the dense
//! helpers in [`crate::linalg`] and the stage containers.
//!
//! * [`augmented`] - Riccati recursion over the state stacked with the last
//!   `l` controls and a constant.
//! * [`batch`] - the deterministic problem as one quadratic in all controls.
//! * [`moments`] - exact expected cost of an affine policy by second-moment
//!   propagation.
//! * [`lqr`] - the textbook recursion for problems without delayed inputs.
//! * [`instances`] - seeded random LQG instances.
//! * [`verify`] - runs every cross-check over a suite of instances.

pub mod augmented;
pub mod batch;
pub mod instances;
pub mod lqr;
pub mod moments;
pub mod verify;

pub use augmented::{augmented_riccati, AugmentedSolution, AugmentedSystem};
pub use batch::{batch_quadratic_solve, BatchSolution};
pub use instances::{Instance, InstanceKind};
pub use lqr::{delay_free_lqr, DelayFreeSolution};
pub use moments::moment_propagation_cost;
pub use verify::{verify_suite, InstanceReport, VerifyReport};
