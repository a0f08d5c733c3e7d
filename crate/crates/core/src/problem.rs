//! The continuous-time problem: a nonlinear system driven by the current and
//! the delayed control, with control-dependent diffusion and a quadratic cost.
//!
//! ```text
//! dx = f(x, u(t), u(t - tau)) dt + F(u(t), u(t - tau)) dw,   w ∈ R^p
//! J  = E[(x(tf) - x*)ᵀ P_tf (x(tf) - x*) + ∫ xᵀP(t)x + uᵀQ(t)u dt]
//! ```
//!
//! The diffusion takes only the two control arguments; the linearization
//! never differentiates it with respect to the state.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg;

/// Symmetry tolerance (relative to the Frobenius norm) for weight matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalue floor (relative to the Frobenius norm) for PSD weight matrices.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// `n`
    pub state: usize,
    /// `d`
    pub control: usize,
    /// `p`, the number of diffusion columns.
    pub noise: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("{what}: expected shape {expected:?}, found {found:?}")]
    Dimension {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("{what}: non-finite value at coordinate {coordinate}")]
    NonFinite {
        what: &'static str,
        coordinate: usize,
    },
}

/// Partial derivatives of the drift at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftJacobians {
    /// ∂f/∂x, `n×n`.
    pub state: DMatrix<f64>,
    /// ∂f/∂u, `n×d`.
    pub control: DMatrix<f64>,
    /// ∂f/∂u_delayed, `n×d`.
    pub delayed: DMatrix<f64>,
}

/// Partial derivatives of each diffusion column, one `n×d` matrix per column.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionJacobians {
    pub control: Vec<DMatrix<f64>>,
    pub delayed: Vec<DMatrix<f64>>,
}

/// A controlled system with input delay. Implementations must be pure:
/// the same arguments always give the same result.
pub trait DelayedSystem {
    fn dims(&self) -> Dims;

    /// `f(x, u, u_delayed)`, an `n`-vector.
    fn drift(&self, x: &DVector<f64>, u: &DVector<f64>, u_delayed: &DVector<f64>) -> DVector<f64>;

    /// `F(u, u_delayed)`, an `n×p` matrix.
    fn diffusion(&self, u: &DVector<f64>, u_delayed: &DVector<f64>) -> DMatrix<f64>;

    /// Closed-form drift derivatives, if the model has them.
    fn drift_jacobians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _u_delayed: &DVector<f64>,
    ) -> Option<DriftJacobians> {
        None
    }

    /// Closed-form diffusion derivatives, if the model has them.
    fn diffusion_jacobians(
        &self,
        _u: &DVector<f64>,
        _u_delayed: &DVector<f64>,
    ) -> Option<DiffusionJacobians> {
        None
    }

    fn state_labels(&self) -> Vec<String> {
        (0..self.dims().state).map(|i| format!("x{i}")).collect()
    }

    fn control_labels(&self) -> Vec<String> {
        (0..self.dims().control).map(|i| format!("u{i}")).collect()
    }
}

macro_rules! forward_delayed_system {
    ($($ptr:ty),*) => {$(
        impl<T: DelayedSystem + ?Sized> DelayedSystem for $ptr {
            fn dims(&self) -> Dims {
                (**self).dims()
            }
            fn drift(&self, x: &DVector<f64>, u: &DVector<f64>, ud: &DVector<f64>) -> DVector<f64> {
                (**self).drift(x, u, ud)
            }
            fn diffusion(&self, u: &DVector<f64>, ud: &DVector<f64>) -> DMatrix<f64> {
                (**self).diffusion(u, ud)
            }
            fn drift_jacobians(&self, x: &DVector<f64>, u: &DVector<f64>, ud: &DVector<f64>) -> Option<DriftJacobians> {
                (**self).drift_jacobians(x, u, ud)
            }
            fn diffusion_jacobians(&self, u: &DVector<f64>, ud: &DVector<f64>) -> Option<DiffusionJacobians> {
                (**self).diffusion_jacobians(u, ud)
            }
            fn state_labels(&self) -> Vec<String> {
                (**self).state_labels()
            }
            fn control_labels(&self) -> Vec<String> {
                (**self).control_labels()
            }
        }
    )*};
}

forward_delayed_system!(&T, Box<T>, Arc<T>);

/// A cost weight that is either constant or a function of time.
#[derive(Clone)]
pub enum Weight {
    Constant(DMatrix<f64>),
    Schedule(Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>),
}

impl Weight {
    pub fn at(&self, t: f64) -> DMatrix<f64> {
        match self {
            Weight::Constant(m) => m.clone(),
            Weight::Schedule(f) => f(t),
        }
    }
}

impl fmt::Debug for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Weight::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            Weight::Schedule(_) => f.write_str("Schedule(..)"),
        }
    }
}

impl From<DMatrix<f64>> for Weight {
    fn from(m: DMatrix<f64>) -> Self {
        Weight::Constant(m)
    }
}

/// Which argument of the drift a Jacobian is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianArg {
    State,
    Control,
    DelayedControl,
}

/// The delayed stochastic optimal control problem.
#[derive(Debug, Clone)]
pub struct Problem<S> {
    pub system: S,
    /// Input delay in seconds.
    pub tau: f64,
    /// Horizon length in seconds.
    pub t_final: f64,
    pub x0: DVector<f64>,
    /// Terminal target state.
    pub target: DVector<f64>,
    /// `P_tf`
    pub terminal_weight: DMatrix<f64>,
    /// Running state weight `P(t)`.
    pub state_weight: Weight,
    /// Running control weight `Q(t)`.
    pub control_weight: Weight,
}

/// Outcome of one validation check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn record(&mut self, name: &'static str, passed: bool, detail: String) {
        self.checks.push(Check {
            name,
            passed,
            detail,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for c in self.failures() {
            if !first {
                f.write_str("; ")?;
            }
            first = false;
            write!(f, "{}: {}", c.name, c.detail)?;
        }
        if first {
            f.write_str("ok")?;
        }
        Ok(())
    }
}

fn check_shape(
    what: &'static str,
    found: (usize, usize),
    expected: (usize, usize),
) -> Result<(), ProblemError> {
    if found == expected {
        Ok(())
    } else {
        Err(ProblemError::Dimension {
            what,
            expected,
            found,
        })
    }
}

fn check_finite(what: &'static str, values: &[f64]) -> Result<(), ProblemError> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(coordinate) => Err(ProblemError::NonFinite { what, coordinate }),
    }
}

/// Central-difference Jacobian of `f` at `z`, with step
/// `cbrt(eps) * max(1, |z_i|)` per coordinate.
pub fn numeric_jacobian<F>(f: F, z: &DVector<f64>) -> Result<DMatrix<f64>, ProblemError>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let base = f(z);
    check_finite("jacobian base value", base.as_slice())?;
    let rows = base.len();
    let mut jac = DMatrix::zeros(rows, z.len());
    let root_eps = libm::cbrt(f64::EPSILON);
    let mut probe = z.clone();
    for i in 0..z.len() {
        let h = root_eps * z[i].abs().max(1.0);
        // Divide by the realized width, not 2h, to cancel rounding in z_i ± h.
        let up = z[i] + h;
        let down = z[i] - h;
        probe[i] = up;
        let f_up = f(&probe);
        probe[i] = down;
        let f_down = f(&probe);
        probe[i] = z[i];
        if f_up.iter().chain(f_down.iter()).any(|v| !v.is_finite()) {
            return Err(ProblemError::NonFinite {
                what: "jacobian probe",
                coordinate: i,
            });
        }
        let width = up - down;
        for r in 0..rows {
            jac[(r, i)] = (f_up[r] - f_down[r]) / width;
        }
    }
    Ok(jac)
}

impl<S: DelayedSystem> Problem<S> {
    pub fn dims(&self) -> Dims {
        self.system.dims()
    }

    fn check_args(
        &self,
        x: Option<&DVector<f64>>,
        u: &DVector<f64>,
        u_delayed: &DVector<f64>,
    ) -> Result<(), ProblemError> {
        let dims = self.dims();
        if let Some(x) = x {
            check_shape("state", x.shape(), (dims.state, 1))?;
        }
        check_shape("control", u.shape(), (dims.control, 1))?;
        check_shape("delayed control", u_delayed.shape(), (dims.control, 1))
    }

    /// Evaluates the drift with shape checks on inputs and output.
    pub fn eval_drift(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        u_delayed: &DVector<f64>,
    ) -> Result<DVector<f64>, ProblemError> {
        self.check_args(Some(x), u, u_delayed)?;
        let out = self.system.drift(x, u, u_delayed);
        check_shape("drift output", out.shape(), (self.dims().state, 1))?;
        Ok(out)
    }

    /// Evaluates the diffusion with shape checks on inputs and output.
    pub fn eval_diffusion(
        &self,
        u: &DVector<f64>,
        u_delayed: &DVector<f64>,
    ) -> Result<DMatrix<f64>, ProblemError> {
        self.check_args(None, u, u_delayed)?;
        let dims = self.dims();
        let out = self.system.diffusion(u, u_delayed);
        check_shape("diffusion output", out.shape(), (dims.state, dims.noise))?;
        Ok(out)
    }

    /// Finite-difference drift Jacobian with respect to one argument.
    pub fn numeric_drift_jacobian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        u_delayed: &DVector<f64>,
        which: JacobianArg,
    ) -> Result<DMatrix<f64>, ProblemError> {
        self.check_args(Some(x), u, u_delayed)?;
        let sys = &self.system;
        match which {
            JacobianArg::State => numeric_jacobian(|z| sys.drift(z, u, u_delayed), x),
            JacobianArg::Control => numeric_jacobian(|z| sys.drift(x, z, u_delayed), u),
            JacobianArg::DelayedControl => numeric_jacobian(|z| sys.drift(x, u, z), u_delayed),
        }
    }

    /// Drift Jacobians: analytic when the system provides them, central differences otherwise.
    pub fn drift_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        u_delayed: &DVector<f64>,
    ) -> Result<DriftJacobians, ProblemError> {
        self.check_args(Some(x), u, u_delayed)?;
        let dims = self.dims();
        let jac = match self.system.drift_jacobians(x, u, u_delayed) {
            Some(j) => j,
            None => DriftJacobians {
                state: self.numeric_drift_jacobian(x, u, u_delayed, JacobianArg::State)?,
                control: self.numeric_drift_jacobian(x, u, u_delayed, JacobianArg::Control)?,
                delayed: self.numeric_drift_jacobian(
                    x,
                    u,
                    u_delayed,
                    JacobianArg::DelayedControl,
                )?,
            },
        };
        check_shape("df/dx", jac.state.shape(), (dims.state, dims.state))?;
        check_shape("df/du", jac.control.shape(), (dims.state, dims.control))?;
        check_shape(
            "df/du_delayed",
            jac.delayed.shape(),
            (dims.state, dims.control),
        )?;
        Ok(jac)
    }

    /// Finite-difference Jacobians of every diffusion column.
    pub fn numeric_diffusion_jacobians(
        &self,
        u: &DVector<f64>,
        u_delayed: &DVector<f64>,
    ) -> Result<DiffusionJacobians, ProblemError> {
        self.check_args(None, u, u_delayed)?;
        let sys = &self.system;
        // Flatten F column-major so each column's block of rows is contiguous.
        let flat = |m: DMatrix<f64>| DVector::from_column_slice(m.as_slice());
        let wrt_u = numeric_jacobian(|z| flat(sys.diffusion(z, u_delayed)), u)?;
        let wrt_ud = numeric_jacobian(|z| flat(sys.diffusion(u, z)), u_delayed)?;
        let dims = self.dims();
        let n = dims.state;
        let split = |j: &DMatrix<f64>| {
            (0..dims.noise)
                .map(|col| j.rows(col * n, n).into_owned())
                .collect::<Vec<_>>()
        };
        Ok(DiffusionJacobians {
            control: split(&wrt_u),
            delayed: split(&wrt_ud),
        })
    }

    /// Diffusion Jacobians: analytic when available, central differences otherwise.
    pub fn diffusion_jacobians(
        &self,
        u: &DVector<f64>,
        u_delayed: &DVector<f64>,
    ) -> Result<DiffusionJacobians, ProblemError> {
        self.check_args(None, u, u_delayed)?;
        let dims = self.dims();
        let jac = match self.system.diffusion_jacobians(u, u_delayed) {
            Some(j) => j,
            None => self.numeric_diffusion_jacobians(u, u_delayed)?,
        };
        let expected = (dims.state, dims.control);
        if jac.control.len() != dims.noise || jac.delayed.len() != dims.noise {
            return Err(ProblemError::Dimension {
                what: "diffusion jacobian column count",
                expected: (dims.noise, 1),
                found: (jac.control.len().min(jac.delayed.len()), 1),
            });
        }
        for m in jac.control.iter().chain(jac.delayed.iter()) {
            check_shape("dF/du", m.shape(), expected)?;
        }
        Ok(jac)
    }

    /// Checks dimensions and the weight-matrix assumptions, probing the
    /// time-varying weights at `0`, `t_final / 2` and `t_final`.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let dims = self.dims();
        let (n, d, p) = (dims.state, dims.control, dims.noise);

        report.record(
            "dimensions",
            n > 0 && d > 0,
            format!("state dim {n}, control dim {d}, noise dim {p}"),
        );
        report.record(
            "tau",
            self.tau > 0.0 && self.tau.is_finite(),
            format!("delay must be positive, got {}", self.tau),
        );
        report.record(
            "t_final",
            self.t_final > 0.0 && self.t_final.is_finite(),
            format!("horizon must be positive, got {}", self.t_final),
        );
        report.record(
            "x0",
            self.x0.len() == n && self.x0.iter().all(|v| v.is_finite()),
            format!("initial state must be a finite {n}-vector"),
        );
        report.record(
            "target",
            self.target.len() == n && self.target.iter().all(|v| v.is_finite()),
            format!("target must be a finite {n}-vector"),
        );
        if n == 0 || d == 0 {
            return report;
        }

        check_weight_psd(&mut report, "P_tf", &self.terminal_weight, n);
        let samples = [0.0, 0.5 * self.t_final, self.t_final];
        for &t in &samples {
            check_weight_psd(&mut report, "P(t)", &self.state_weight.at(t), n);
            let q = self.control_weight.at(t);
            if q.shape() != (d, d) {
                report.record(
                    "Q(t)",
                    false,
                    format!("Q at t={t} has shape {:?}, expected ({d}, {d})", q.shape()),
                );
            } else if !linalg::is_symmetric(&q, SYMMETRY_TOL) {
                report.record("Q(t)", false, format!("Q not symmetric at t={t}"));
            } else {
                let min = linalg::min_eigenvalue(&q);
                report.record(
                    "Q(t)",
                    min > 0.0,
                    format!("Q not positive definite at t={t} (min eigenvalue {min})"),
                );
            }
        }

        if self.x0.len() == n {
            let zero = DVector::zeros(d);
            let out = self.eval_drift(&self.x0, &zero, &zero);
            report.record(
                "drift",
                out.as_ref()
                    .map(|v| v.iter().all(|x| x.is_finite()))
                    .unwrap_or(false),
                match out {
                    Ok(_) => String::from("drift at x0 must be finite"),
                    Err(e) => format!("{e}"),
                },
            );
            let out = self.eval_diffusion(&zero, &zero);
            report.record(
                "diffusion",
                out.as_ref()
                    .map(|v| v.iter().all(|x| x.is_finite()))
                    .unwrap_or(false),
                match out {
                    Ok(_) => String::from("diffusion at zero control must be finite"),
                    Err(e) => format!("{e}"),
                },
            );
        }
        report
    }
}

fn check_weight_psd(report: &mut ValidationReport, name: &'static str, m: &DMatrix<f64>, n: usize) {
    if m.shape() != (n, n) {
        report.record(
            name,
            false,
            format!("{name} has shape {:?}, expected ({n}, {n})", m.shape()),
        );
    } else if !linalg::is_symmetric(m, SYMMETRY_TOL) {
        report.record(name, false, format!("{name} not symmetric"));
    } else {
        let min = linalg::min_eigenvalue(m);
        report.record(
            name,
            min >= -PSD_TOL * m.norm(),
            format!("{name} not PSD (min eigenvalue {min})"),
        );
    }
}
