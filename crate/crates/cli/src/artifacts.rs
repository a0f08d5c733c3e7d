//! Files written by the commands. Numbers use Rust's shortest round-trip
//! formatting, so the same run always produces the same bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use delay_ilqr::backward::StageGains;
use delay_ilqr::oracle::verify::VerifyReport;
use delay_ilqr::{
    DMatrix, DVector, IterationReport, NominalTrajectory, Plan, Policy, SimulationStats, Solution,
    TimeGrid,
};
use serde::{Deserialize, Serialize};

use crate::config::{from_matrix, to_matrix, Matrix};
use crate::error::CliError;

pub const TRAJECTORY: &str = "trajectory.csv";
pub const GAINS: &str = "gains.toml";
pub const ITERATIONS: &str = "iterations.csv";
pub const SUMMARY: &str = "summary.toml";
pub const SIMULATION: &str = "simulation.toml";
pub const TERMINAL_STATES: &str = "terminal_states.csv";
pub const VERIFY: &str = "verify.csv";

fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

/// One row per step; the last row has the terminal state and no control.
pub fn trajectory_csv(
    grid: &TimeGrid,
    nominal: &NominalTrajectory,
    state_labels: &[String],
    control_labels: &[String],
) -> String {
    let mut out = String::from("k,t");
    for name in state_labels.iter().chain(control_labels) {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (k, x) in nominal.states.iter().enumerate() {
        write!(out, "{k},{}", num(grid.time(k))).unwrap();
        for v in x.iter() {
            write!(out, ",{}", num(*v)).unwrap();
        }
        match nominal.controls.get(k) {
            Some(u) => u.iter().for_each(|v| write!(out, ",{}", num(*v)).unwrap()),
            None => control_labels.iter().for_each(|_| out.push(',')),
        }
        out.push('\n');
    }
    out
}

pub fn iterations_csv(reports: &[IterationReport]) -> String {
    let mut out = String::from("iteration,cost,deterministic_cost,alpha,feedforward_norm\n");
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.iteration,
            num(r.cost),
            num(r.deterministic_cost),
            num(r.step_alpha),
            num(r.grad_norm)
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Deterministic rollout cost of the final nominal.
    pub final_cost: f64,
    /// Expected cost of the final policy under the local model.
    pub expected_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: String,
}

impl Summary {
    pub fn of(solution: &Solution) -> Self {
        Self {
            final_cost: solution.cost,
            expected_cost: solution.merit,
            iterations: solution.reports.len(),
            converged: solution.converged(),
            stop_reason: solution.stop.as_str().to_string(),
        }
    }
}

/// A block with its shape spelled out; `data` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub rows: usize,
    pub cols: usize,
    pub data: Matrix,
}

impl Block {
    fn of(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: from_matrix(m),
        }
    }

    fn to_matrix(&self, field: &str) -> Result<DMatrix<f64>, CliError> {
        let m = to_matrix(field, &self.data).map_err(|e| CliError::validation(e.message))?;
        // Zero-row blocks lose their column count in `data`.
        if self.rows == 0 {
            return Ok(DMatrix::zeros(0, self.cols));
        }
        if m.shape() != (self.rows, self.cols) {
            return Err(CliError::validation(format!(
                "{field}: declared {}x{}, data is {}x{}",
                self.rows,
                self.cols,
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(m)
    }
}

/// Per-step gains `ι_k`, `L_k`, `M_k^i` (tap `i` multiplies `δu_{k+i-l}`),
/// together with the nominal they act around.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub k: usize,
    pub shift: f64,
    pub nominal_state: Vec<f64>,
    pub nominal_control: Vec<f64>,
    pub feedforward: Vec<f64>,
    pub feedback: Block,
    pub hessian: Block,
    pub taps: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub state_dim: usize,
    pub control_dim: usize,
    pub delay_steps: usize,
    pub steps: usize,
    pub dt: f64,
    pub terminal_state: Vec<f64>,
    pub stage: Vec<StageRecord>,
}

impl PolicyFile {
    pub fn of(plan: &Plan, state_dim: usize, control_dim: usize) -> Self {
        let grid = plan.policy.grid;
        let stage = plan
            .policy
            .gains
            .iter()
            .enumerate()
            .map(|(k, g)| StageRecord {
                k,
                shift: g.shift,
                nominal_state: plan.nominal.states[k].iter().copied().collect(),
                nominal_control: plan.nominal.controls[k].iter().copied().collect(),
                feedforward: g.feedforward.iter().copied().collect(),
                feedback: Block::of(&g.feedback),
                hessian: Block::of(&g.hessian),
                taps: g.taps.iter().map(Block::of).collect(),
            })
            .collect();
        Self {
            state_dim,
            control_dim,
            delay_steps: grid.delay_steps,
            steps: grid.steps,
            dt: grid.dt,
            terminal_state: plan.nominal.states[grid.steps].iter().copied().collect(),
            stage,
        }
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read policy {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| {
            CliError::validation(format!("policy {}: {}", path.display(), e.message()))
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("policy serializes")
    }

    /// Rebuilds the plan, checking it against the dimensions and grid the
    /// config implies.
    pub fn plan(
        &self,
        grid: &TimeGrid,
        state_dim: usize,
        control_dim: usize,
    ) -> Result<Plan, CliError> {
        let mismatch = |what: &str, policy: String, config: String| {
            CliError::validation(format!(
                "policy {what} is {policy} but the config gives {config}"
            ))
        };
        if self.state_dim != state_dim {
            return Err(mismatch(
                "state dimension",
                self.state_dim.to_string(),
                state_dim.to_string(),
            ));
        }
        if self.control_dim != control_dim {
            return Err(mismatch(
                "control dimension",
                self.control_dim.to_string(),
                control_dim.to_string(),
            ));
        }
        if self.steps != grid.steps || self.stage.len() != grid.steps {
            return Err(mismatch(
                "step count",
                self.stage.len().to_string(),
                grid.steps.to_string(),
            ));
        }
        if self.delay_steps != grid.delay_steps {
            return Err(mismatch(
                "delay",
                self.delay_steps.to_string(),
                grid.delay_steps.to_string(),
            ));
        }
        if (self.dt - grid.dt).abs() > 1e-12 * grid.dt {
            return Err(mismatch("dt", num(self.dt), num(grid.dt)));
        }

        let vector = |field: String, v: &[f64], len: usize| {
            if v.len() == len && v.iter().all(|x| x.is_finite()) {
                Ok(DVector::from_column_slice(v))
            } else {
                Err(CliError::validation(format!(
                    "{field}: expected {len} finite entries"
                )))
            }
        };
        let shape = |field: &str, m: &DMatrix<f64>, rows: usize, cols: usize| {
            if m.shape() == (rows, cols) {
                Ok(())
            } else {
                Err(CliError::validation(format!(
                    "{field}: expected {rows}x{cols}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )))
            }
        };

        let (n, d) = (state_dim, control_dim);
        let mut states = Vec::with_capacity(grid.steps + 1);
        let mut controls = Vec::with_capacity(grid.steps);
        let mut gains = Vec::with_capacity(grid.steps);
        for (k, s) in self.stage.iter().enumerate() {
            let at = |name: &str| format!("stage[{k}].{name}");
            if s.k != k {
                return Err(CliError::validation(format!(
                    "{}: expected {k}, got {}",
                    at("k"),
                    s.k
                )));
            }
            states.push(vector(at("nominal_state"), &s.nominal_state, n)?);
            controls.push(vector(at("nominal_control"), &s.nominal_control, d)?);
            let feedback = s.feedback.to_matrix(&at("feedback"))?;
            shape(&at("feedback"), &feedback, d, n)?;
            let hessian = s.hessian.to_matrix(&at("hessian"))?;
            shape(&at("hessian"), &hessian, d, d)?;
            let pending = grid.pending(k);
            if s.taps.len() > pending {
                return Err(CliError::validation(format!(
                    "{}: at most {pending} taps at this step, got {}",
                    at("taps"),
                    s.taps.len()
                )));
            }
            let taps = s
                .taps
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let name = at(&format!("taps[{i}]"));
                    let m = b.to_matrix(&name)?;
                    shape(&name, &m, d, d)?;
                    Ok(m)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            gains.push(StageGains {
                feedforward: vector(at("feedforward"), &s.feedforward, d)?,
                feedback,
                taps,
                hessian,
                shift: s.shift,
            });
        }
        states.push(vector("terminal_state".into(), &self.terminal_state, n)?);
        Ok(Plan {
            nominal: NominalTrajectory::new(states, controls, d, grid.delay_steps),
            policy: Policy {
                grid: *grid,
                gains,
                value: Vec::new(),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub seed: u64,
    pub trials: usize,
    pub finished: usize,
    pub divergences: usize,
    pub mean_cost: f64,
    pub stderr: f64,
}

impl SimulationRecord {
    pub fn of(stats: &SimulationStats, seed: u64) -> Self {
        Self {
            seed,
            trials: stats.trials,
            finished: stats.finished,
            divergences: stats.divergences,
            mean_cost: stats.mean,
            stderr: stats.stderr,
        }
    }
}

pub fn terminal_states_csv(stats: &SimulationStats, labels: &[String]) -> String {
    let mut out = String::from("trial");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (i, x) in stats.terminal_states.iter().enumerate() {
        write!(out, "{i}").unwrap();
        for v in x.iter() {
            write!(out, ",{}", num(*v)).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn verify_csv(report: &VerifyReport) -> String {
    let mut out = String::from(
        "seed,kind,n,d,p,l,K,gain_deviation,value_deviation,cost_deviation,control_deviation,hessian_margin,gamma_ratio,zero_delay_blocks,passed,error\n",
    );
    for r in &report.instances {
        let (n, d, p, l, k) = r.dims;
        writeln!(
            out,
            "{},{},{n},{d},{p},{l},{k},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.kind.as_str(),
            num(r.gain_deviation),
            num(r.value_deviation),
            num(r.cost_deviation),
            num(r.control_deviation),
            num(r.hessian_margin),
            num(r.gamma_ratio),
            r.zero_delay_blocks,
            r.passed(),
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        )
        .unwrap();
    }
    out
}
