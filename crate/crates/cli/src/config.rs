//! Run configuration: TOML sections `problem`, `grid`, `solver`,
//! `simulation` and `output`, plus dotted-path overrides.
//!
//! Matrices are written row-major as arrays of rows, e.g.
//! `terminal_weight = [[1000.0, 0.0], [0.0, 100.0]]`.

use std::path::{Path, PathBuf};

use delay_ilqr::discretization::DiscretizationError;
use delay_ilqr::linalg::Regularization;
use delay_ilqr::models::{LinearSystem, PendulumModel, ReachModel};
use delay_ilqr::{
    build_grid, DMatrix, DVector, DelayedSystem, NoiseScaling, Problem, SolveOptions, TimeGrid,
    Weight,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub type Matrix = Vec<Vec<f64>>;

/// A problem whose system is chosen at run time.
pub type DynProblem = Problem<Box<dyn DelayedSystem + Send + Sync>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    Reach,
    Pendulum,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub model: ModelName,
    pub x0: Vec<f64>,
    pub target: Vec<f64>,
    pub terminal_weight: Matrix,
    pub state_weight: Matrix,
    pub control_weight: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reach: Option<ReachParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pendulum: Option<PendulumParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReachParams {
    pub mass: f64,
    pub damping: f64,
    pub noise: f64,
}

impl Default for ReachParams {
    fn default() -> Self {
        let m = ReachModel::default();
        Self {
            mass: m.mass,
            damping: m.damping,
            noise: m.noise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumParams {
    pub stiffness: f64,
    pub damping: f64,
    pub noise_current: f64,
    pub noise_delayed: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        let m = PendulumModel::default();
        Self {
            stiffness: m.stiffness,
            damping: m.damping,
            noise_current: m.noise_current,
            noise_delayed: m.noise_delayed,
        }
    }
}

/// `f = A x + B0 u + B1 u_d`; noise channel `j` has column
/// `noise_offset[:, j] + noise_control[j] u + noise_delayed[j] u_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearParams {
    pub a: Matrix,
    pub b0: Matrix,
    pub b1: Matrix,
    /// `n×p`; omit for a noise-free system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_offset: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub noise_control: Vec<Matrix>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub noise_delayed: Vec<Matrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_final: f64,
    pub tau: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScalingName {
    Printed,
    SqrtDt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub cost_tolerance: f64,
    pub stall_iterations: usize,
    pub feedforward_tolerance: f64,
    pub min_step: f64,
    pub regularization_initial: f64,
    pub regularization_maximum: f64,
    pub regularization_growth: f64,
    pub noise_scaling: NoiseScalingName,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolveOptions::default();
        Self {
            max_iterations: o.max_iterations,
            cost_tolerance: o.cost_tolerance,
            stall_iterations: o.stall_iterations,
            feedforward_tolerance: o.feedforward_tolerance,
            min_step: o.min_step,
            regularization_initial: o.regularization.initial,
            regularization_maximum: o.regularization.maximum,
            regularization_growth: o.regularization.growth,
            noise_scaling: match o.noise_scaling {
                NoiseScaling::Printed => NoiseScalingName::Printed,
                NoiseScaling::SqrtDt => NoiseScalingName::SqrtDt,
            },
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            max_iterations: self.max_iterations,
            cost_tolerance: self.cost_tolerance,
            stall_iterations: self.stall_iterations,
            feedforward_tolerance: self.feedforward_tolerance,
            min_step: self.min_step,
            regularization: Regularization {
                initial: self.regularization_initial,
                maximum: self.regularization_maximum,
                growth: self.regularization_growth,
            },
            noise_scaling: match self.noise_scaling {
                NoiseScalingName::Printed => NoiseScaling::Printed,
                NoiseScalingName::SqrtDt => NoiseScaling::SqrtDt,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub trials: usize,
    pub seed: u64,
    /// Also write one row per finished trial with its terminal state.
    pub terminal_states: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            terminal_states: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
}

impl RunConfig {
    /// Reads `path` and applies `overrides` (`dotted.path=value`) before
    /// deserializing.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::config(one_line(e.message())))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = serde_path_to_error::deserialize(table).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(format!("{path}: {}", one_line(&e.into_inner().to_string())))
        })?;
        config.check()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Range and shape checks that do not need the model.
    pub fn check(&self) -> Result<(), CliError> {
        self.grid()?;
        let p = &self.problem;
        check_vector("problem.x0", &p.x0)?;
        check_vector("problem.target", &p.target)?;
        to_matrix("problem.terminal_weight", &p.terminal_weight)?;
        to_matrix("problem.state_weight", &p.state_weight)?;
        to_matrix("problem.control_weight", &p.control_weight)?;
        match p.model {
            ModelName::Reach => {
                let r = p.reach.unwrap_or_default();
                positive("problem.reach.mass", r.mass)?;
                non_negative("problem.reach.damping", r.damping)?;
                non_negative("problem.reach.noise", r.noise)?;
            }
            ModelName::Pendulum => {
                let q = p.pendulum.unwrap_or_default();
                finite("problem.pendulum.stiffness", q.stiffness)?;
                non_negative("problem.pendulum.damping", q.damping)?;
                non_negative("problem.pendulum.noise_current", q.noise_current)?;
                non_negative("problem.pendulum.noise_delayed", q.noise_delayed)?;
            }
            ModelName::Linear => {
                let lin = p.linear.as_ref().ok_or_else(|| {
                    CliError::config("problem.linear: required when problem.model = \"linear\"")
                })?;
                linear_system(lin)?;
            }
        }

        let s = &self.solver;
        non_negative("solver.cost_tolerance", s.cost_tolerance)?;
        non_negative("solver.feedforward_tolerance", s.feedforward_tolerance)?;
        if !(s.min_step > 0.0 && s.min_step <= 1.0) {
            return Err(CliError::config(format!(
                "solver.min_step: must lie in (0, 1], got {}",
                s.min_step
            )));
        }
        if s.stall_iterations == 0 {
            return Err(CliError::config(
                "solver.stall_iterations: must be at least 1",
            ));
        }
        positive("solver.regularization_initial", s.regularization_initial)?;
        if s.regularization_maximum.is_nan() || s.regularization_maximum < s.regularization_initial
        {
            return Err(CliError::config(
                "solver.regularization_maximum: must be at least solver.regularization_initial",
            ));
        }
        if !(s.regularization_growth > 1.0 && s.regularization_growth.is_finite()) {
            return Err(CliError::config(
                "solver.regularization_growth: must exceed 1",
            ));
        }
        if self.simulation.trials == 0 {
            return Err(CliError::config("simulation.trials: must be at least 1"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        let g = &self.grid;
        build_grid(g.t_final, g.tau, g.steps).map_err(|e| match e {
            DiscretizationError::InvalidGrid(msg) => {
                let field = ["t_final", "tau"]
                    .into_iter()
                    .find(|f| msg.starts_with(f))
                    .unwrap_or("steps");
                CliError::config(format!("grid.{field}: {msg}"))
            }
            DiscretizationError::DelayNotMultiple { ratio, suggestions } => {
                let hint = if suggestions.is_empty() {
                    String::new()
                } else {
                    let s: Vec<String> = suggestions.iter().map(|k| k.to_string()).collect();
                    format!("; grid.steps values that work: {}", s.join(", "))
                };
                CliError::config(format!(
                    "grid.tau: {} is not a multiple of dt = t_final/steps = {} (tau/dt = {ratio}){hint}",
                    g.tau,
                    g.t_final / g.steps as f64
                ))
            }
            other => CliError::config(format!("grid: {other}")),
        })
    }

    /// Builds the problem. Dimension and weight checks are left to
    /// [`Problem::validate`].
    pub fn problem(&self) -> Result<DynProblem, CliError> {
        self.check()?;
        let p = &self.problem;
        let system: Box<dyn DelayedSystem + Send + Sync> = match p.model {
            ModelName::Reach => {
                let r = p.reach.unwrap_or_default();
                Box::new(ReachModel {
                    mass: r.mass,
                    damping: r.damping,
                    noise: r.noise,
                })
            }
            ModelName::Pendulum => {
                let q = p.pendulum.unwrap_or_default();
                Box::new(PendulumModel {
                    stiffness: q.stiffness,
                    damping: q.damping,
                    noise_current: q.noise_current,
                    noise_delayed: q.noise_delayed,
                })
            }
            ModelName::Linear => Box::new(linear_system(p.linear.as_ref().expect("checked"))?),
        };
        Ok(Problem {
            system,
            tau: self.grid.tau,
            t_final: self.grid.t_final,
            x0: DVector::from_column_slice(&p.x0),
            target: DVector::from_column_slice(&p.target),
            terminal_weight: to_matrix("problem.terminal_weight", &p.terminal_weight)?,
            state_weight: Weight::Constant(to_matrix("problem.state_weight", &p.state_weight)?),
            control_weight: Weight::Constant(to_matrix(
                "problem.control_weight",
                &p.control_weight,
            )?),
        })
    }

    /// `--out` wins, then `output.directory`, then `env_default`, then
    /// `delay-ilqr-out`.
    pub fn output_dir(&self, flag: Option<&Path>, env_default: Option<&Path>) -> PathBuf {
        resolve_output(
            flag,
            self.output.directory.as_deref().map(Path::new),
            env_default,
        )
    }
}

pub fn resolve_output(
    flag: Option<&Path>,
    configured: Option<&Path>,
    env_default: Option<&Path>,
) -> PathBuf {
    flag.or(configured)
        .or(env_default)
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("delay-ilqr-out"))
}

fn linear_system(lin: &LinearParams) -> Result<LinearSystem, CliError> {
    let a = to_matrix("problem.linear.a", &lin.a)?;
    let n = a.nrows();
    if a.ncols() != n {
        return Err(CliError::config(format!(
            "problem.linear.a: must be square, got {n}x{}",
            a.ncols()
        )));
    }
    let b0 = to_matrix("problem.linear.b0", &lin.b0)?;
    let d = b0.ncols();
    expect_shape("problem.linear.b0", &b0, n, d)?;
    let b1 = to_matrix("problem.linear.b1", &lin.b1)?;
    expect_shape("problem.linear.b1", &b1, n, d)?;
    let offset = match &lin.noise_offset {
        Some(m) => to_matrix("problem.linear.noise_offset", m)?,
        None => DMatrix::zeros(n, 0),
    };
    // An `n×0` offset cannot be written as rows, so a given offset sets `p`
    // and an empty one falls back to the gain lists.
    let p = if lin.noise_offset.is_some() {
        offset.ncols()
    } else {
        lin.noise_control.len().max(lin.noise_delayed.len())
    };
    let offset = if lin.noise_offset.is_some() {
        expect_shape("problem.linear.noise_offset", &offset, n, p)?;
        offset
    } else {
        DMatrix::zeros(n, p)
    };
    let gains = |field: &str, list: &[Matrix]| -> Result<Vec<DMatrix<f64>>, CliError> {
        if list.is_empty() {
            return Ok(vec![DMatrix::zeros(n, d); p]);
        }
        if list.len() != p {
            return Err(CliError::config(format!(
                "{field}: expected {p} matrices (one per noise channel), got {}",
                list.len()
            )));
        }
        list.iter()
            .enumerate()
            .map(|(j, m)| {
                let name = format!("{field}[{j}]");
                let m = to_matrix(&name, m)?;
                expect_shape(&name, &m, n, d)?;
                Ok(m)
            })
            .collect()
    };
    let control = gains("problem.linear.noise_control", &lin.noise_control)?;
    let delayed = gains("problem.linear.noise_delayed", &lin.noise_delayed)?;
    Ok(LinearSystem::new(a, b0, b1).with_noise(offset, control, delayed))
}

pub fn to_matrix(field: &str, rows: &Matrix) -> Result<DMatrix<f64>, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(CliError::config(format!(
            "{field}: row {i} has {} entries, expected {ncols}",
            rows[i].len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::config(format!("{field}: entries must be finite")));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

pub fn from_matrix(m: &DMatrix<f64>) -> Matrix {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn expect_shape(field: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<(), CliError> {
    if m.shape() == (rows, cols) {
        Ok(())
    } else {
        Err(CliError::config(format!(
            "{field}: expected {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

fn check_vector(field: &str, v: &[f64]) -> Result<(), CliError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(CliError::config(format!("{field}: entries must be finite")))
    }
}

fn finite(field: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(format!(
            "{field}: must be finite, got {v}"
        )))
    }
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(format!(
            "{field}: must be positive, got {v}"
        )))
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(format!(
            "{field}: must be non-negative, got {v}"
        )))
    }
}

/// Sets `path` (dot separated) to `raw`, which is read as a TOML value and
/// falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        CliError::config(format!(
            "override `{assignment}`: expected dotted.path=value"
        ))
    })?;
    let path = path.trim();
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::config(format!(
            "override `{assignment}`: empty key in path"
        )));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let (last, parents) = keys.split_last().expect("non-empty");
    let mut cursor = table;
    for (i, key) in parents.iter().enumerate() {
        let entry = cursor
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = match entry {
            toml::Value::Table(t) => t,
            _ => {
                return Err(CliError::config(format!(
                    "{}: not a table, cannot set {path}",
                    keys[..=i].join(".")
                )))
            }
        };
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
