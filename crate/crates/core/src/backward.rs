//! Backward recursion for the delayed LQG problem.
//!
//! At step `k` the optimal cost-to-go is a quadratic in the state deviation
//! `δx_k` and in the `m_k = min(K - k, l)` controls that were already issued
//! but have not yet reached the plant, `w_i = δu_{k+i-l}` for `i < m_k`
//! (`w_0` is the oldest and acts next):
//!
//! ```text
//! J(k) = s̃ + 2 δxᵀ s + δxᵀ S δx + 2 Σ w_iᵀ r_i + 2 δxᵀ Σ R̃_i w_i + Σ w_iᵀ R_ij w_j
//! ```
//!
//! The optimal control is affine in the same quantities,
//! `δu_k = ι_k + L_k δx_k + Σ_i M_k^i δu_{k+i-l}`.
//!
//! One backward step eliminates `δu_{k-1}`. When `m_k = l` the pending slot
//! `i = l - 1` at step `k` *is* `δu_{k-1}`, so the value's history blocks couple
//! into the Hessian; otherwise (`k > K - l`) that slot lies past the horizon
//! and only the plant terms appear.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::discretization::{LinearStage, QuadStage, TimeGrid};
use crate::linalg::{self, Regularization};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackwardError {
    #[error("backward pass failure at step {step}: control Hessian not positive definite (min eigenvalue {min_eigenvalue})")]
    NotPositiveDefinite { step: usize, min_eigenvalue: f64 },
    #[error("expected {expected} {what}, found {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

/// Cost-to-go coefficients at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueCoeffs {
    /// `s̃`
    pub offset: f64,
    /// `s`
    pub vx: DVector<f64>,
    /// `S`
    pub vxx: DMatrix<f64>,
    /// `r_i`, one per pending control.
    pub vw: Vec<DVector<f64>>,
    /// `R̃_i`, `n×d`.
    pub vxw: Vec<DMatrix<f64>>,
    /// `R_ij`, `d×d`, with `R_ji = R_ijᵀ`.
    pub vww: Vec<Vec<DMatrix<f64>>>,
}

impl ValueCoeffs {
    /// Number of pending controls this value depends on.
    pub fn pending(&self) -> usize {
        self.vw.len()
    }

    /// Evaluates the quadratic at a state deviation and pending controls
    /// (`history[i]` is `δu_{k+i-l}`).
    pub fn evaluate(&self, dx: &DVector<f64>, history: &[DVector<f64>]) -> f64 {
        assert_eq!(history.len(), self.pending());
        let mut total = self.offset + 2.0 * dx.dot(&self.vx) + dx.dot(&(&self.vxx * dx));
        for (i, w) in history.iter().enumerate() {
            total += 2.0 * w.dot(&self.vw[i]) + 2.0 * dx.dot(&(&self.vxw[i] * w));
            for (j, v) in history.iter().enumerate() {
                total += linalg::bilinear(w, &self.vww[i][j], v);
            }
        }
        total
    }
}

/// Policy coefficients at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGains {
    /// `ι`, the feedforward offset.
    pub feedforward: DVector<f64>,
    /// `L`, `d×n`.
    pub feedback: DMatrix<f64>,
    /// `M^i`, `d×d`, multiplying `δu_{k+i-l}`.
    pub taps: Vec<DMatrix<f64>>,
    /// `H`, the control Hessian actually factored (including any shift).
    pub hessian: DMatrix<f64>,
    /// Diagonal shift that regularization added to `H` (0 when none).
    pub shift: f64,
}

impl StageGains {
    /// `ι + L δx + Σ M^i history[i]`; `history` may be longer than the tap list.
    pub fn control(&self, dx: &DVector<f64>, history: &[DVector<f64>]) -> DVector<f64> {
        let mut du = &self.feedforward + &self.feedback * dx;
        for (m, w) in self.taps.iter().zip(history) {
            du += m * w;
        }
        du
    }
}

/// Time-varying affine policy with the cost-to-go it achieves.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub grid: TimeGrid,
    /// `gains[k]` for `k = 0..K`.
    pub gains: Vec<StageGains>,
    /// `value[k]` for `k = 0..=K`.
    pub value: Vec<ValueCoeffs>,
}

impl Policy {
    /// Optimal expected cost from the initial state with no deviations: `s̃_0`.
    pub fn expected_cost(&self) -> f64 {
        self.value[0].offset
    }

    /// Largest absolute feedforward entry over all steps.
    pub fn feedforward_norm(&self) -> f64 {
        self.gains
            .iter()
            .flat_map(|g| g.feedforward.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

/// `s̃_K = q_K`, `s_K = l_x`, `S_K = l_xx`, no pending controls.
pub fn terminal_value(quad: &QuadStage) -> ValueCoeffs {
    ValueCoeffs {
        offset: quad.offset,
        vx: quad.lx.clone(),
        vxx: quad.lxx.clone(),
        vw: Vec::new(),
        vxw: Vec::new(),
        vww: Vec::new(),
    }
}

/// One backward step: from the value at step `k` and the stage `k - 1`
/// coefficients, produce the gains and the value at `k - 1`.
pub fn stage_step(
    next: &ValueCoeffs,
    lin: &LinearStage,
    quad: &QuadStage,
    grid: &TimeGrid,
    k: usize,
    reg: &Regularization,
) -> Result<(StageGains, ValueCoeffs), BackwardError> {
    assert!(k >= 1 && k <= grid.steps, "step {k} out of range");
    let l = grid.delay_steps;
    let m = grid.pending(k);
    if next.pending() != m {
        return Err(BackwardError::Length {
            what: "pending controls in value",
            expected: m,
            found: next.pending(),
        });
    }
    // Slot l-1 of the value at k holds δu_{k-1}, the control being chosen.
    let top = if m == l { Some(l - 1) } else { None };
    // Slots that remain pending one step earlier, shifted up by one.
    let carried = match top {
        Some(t) => t,
        None => m,
    };

    let a = &lin.a;
    let b0 = &lin.b0;
    let b1 = &lin.b1;
    let s = &next.vxx;
    let sv = &next.vx;
    let b0t = b0.transpose();
    let s_b0 = s * b0;
    let s_b1 = s * b1;
    let s_a = s * a;

    // Plant and noise terms.
    let mut h = &quad.luu + &b0t * &s_b0;
    let mut g_ff = &quad.lu + &b0t * sv;
    let mut g_x = &b0t * &s_a;
    let mut g_w0 = &b0t * &s_b1;
    let mut noise_const = 0.0;
    let mut noise_r0 = DVector::zeros(b1.ncols());
    let mut noise_r00 = DMatrix::zeros(b1.ncols(), b1.ncols());
    for j in 0..lin.noise_channels() {
        let s_c = s * &lin.c[j];
        let s_c0 = s * &lin.c0[j];
        let s_c1 = s * &lin.c1[j];
        let c0t = lin.c0[j].transpose();
        let c1t = lin.c1[j].transpose();
        h += &c0t * &s_c0;
        g_ff += &c0t * &s_c;
        g_w0 += &c0t * &s_c1;
        noise_const += lin.c[j].dot(&s_c);
        noise_r0 += &c1t * &s_c;
        noise_r00 += &c1t * &s_c1;
    }
    // History couplings, slot i moves to slot i+1 at k-1.
    let mut g_w: Vec<DMatrix<f64>> = (0..carried).map(|i| &b0t * &next.vxw[i]).collect();
    if let Some(t) = top {
        let rt = &next.vxw[t];
        let rtt = rt.transpose();
        h += &next.vww[t][t] + &b0t * rt + &rtt * b0;
        g_ff += &next.vw[t];
        g_x += &rtt * a;
        g_w0 += &rtt * b1;
        for (i, gw) in g_w.iter_mut().enumerate() {
            *gw += &next.vww[t][i];
        }
    }
    linalg::symmetrize(&mut h);

    let factor = linalg::factor_spd(&h, reg).map_err(|min_eigenvalue| {
        BackwardError::NotPositiveDefinite {
            step: k - 1,
            min_eigenvalue,
        }
    })?;
    if factor.shift > 0.0 {
        for i in 0..h.nrows() {
            h[(i, i)] += factor.shift;
        }
    }

    let feedforward = -factor.solve_vec(&g_ff);
    let feedback = -factor.solve(&g_x);
    let mut taps = Vec::with_capacity(carried + 1);
    taps.push(-factor.solve(&g_w0));
    for gw in &g_w {
        taps.push(-factor.solve(gw));
    }
    debug_assert_eq!(taps.len(), grid.pending(k - 1));

    let h_ff = &h * &feedforward;
    let h_fb = &h * &feedback;
    let lt = feedback.transpose();
    let at = a.transpose();

    let offset = quad.offset + next.offset + noise_const - feedforward.dot(&h_ff);
    let vx = &quad.lx + &at * sv - &lt * &h_ff;
    let mut vxx = &quad.lxx + &at * &s_a - &lt * &h_fb;
    linalg::symmetrize(&mut vxx);

    let mt: Vec<DMatrix<f64>> = taps.iter().map(|mi| mi.transpose()).collect();
    let h_taps: Vec<DMatrix<f64>> = taps.iter().map(|mi| &h * mi).collect();

    let pending = taps.len();
    let mut vw = Vec::with_capacity(pending);
    let mut vxw = Vec::with_capacity(pending);
    vw.push(b1.transpose() * sv + noise_r0 - &mt[0] * &h_ff);
    vxw.push(&at * &s_b1 - &lt * &h_taps[0]);
    for i in 0..carried {
        vw.push(&next.vw[i] - &mt[i + 1] * &h_ff);
        vxw.push(&at * &next.vxw[i] - &lt * &h_taps[i + 1]);
    }

    let d = b1.ncols();
    let mut vww = vec![vec![DMatrix::zeros(d, d); pending]; pending];
    vww[0][0] = b1.transpose() * &s_b1 + noise_r00 - &mt[0] * &h_taps[0];
    for i in 0..carried {
        let cross = next.vxw[i].transpose() * b1 - &mt[i + 1] * &h_taps[0];
        vww[0][i + 1] = cross.transpose();
        vww[i + 1][0] = cross;
        for j in 0..carried {
            vww[i + 1][j + 1] = &next.vww[i][j] - &mt[i + 1] * &h_taps[j + 1];
        }
    }
    symmetrize_grid(&mut vww);

    Ok((
        StageGains {
            feedforward,
            feedback,
            taps,
            hessian: h,
            shift: factor.shift,
        },
        ValueCoeffs {
            offset,
            vx,
            vxx,
            vw,
            vxw,
            vww,
        },
    ))
}

/// Forces `R_ji = R_ijᵀ` by averaging each mirrored pair.
#[allow(clippy::needless_range_loop)]
fn symmetrize_grid(grid: &mut [Vec<DMatrix<f64>>]) {
    let n = grid.len();
    for i in 0..n {
        linalg::symmetrize(&mut grid[i][i]);
        for j in (i + 1)..n {
            let avg = (&grid[i][j] + grid[j][i].transpose()) * 0.5;
            grid[j][i] = avg.transpose();
            grid[i][j] = avg;
        }
    }
}

/// Runs the recursion from `k = K` down to `k = 1`.
pub fn run_backward(
    stages: &[LinearStage],
    quads: &[QuadStage],
    grid: &TimeGrid,
) -> Result<Policy, BackwardError> {
    run_backward_with(stages, quads, grid, &Regularization::default())
}

pub fn run_backward_with(
    stages: &[LinearStage],
    quads: &[QuadStage],
    grid: &TimeGrid,
    reg: &Regularization,
) -> Result<Policy, BackwardError> {
    let steps = grid.steps;
    if stages.len() != steps {
        return Err(BackwardError::Length {
            what: "linear stages",
            expected: steps,
            found: stages.len(),
        });
    }
    if quads.len() != steps + 1 {
        return Err(BackwardError::Length {
            what: "cost stages",
            expected: steps + 1,
            found: quads.len(),
        });
    }
    let mut value = Vec::with_capacity(steps + 1);
    let mut gains = Vec::with_capacity(steps);
    value.push(terminal_value(&quads[steps]));
    for k in (1..=steps).rev() {
        let next = value.last().expect("value is never empty");
        let (g, v) = stage_step(next, &stages[k - 1], &quads[k - 1], grid, k, reg)?;
        gains.push(g);
        value.push(v);
    }
    gains.reverse();
    value.reverse();
    Ok(Policy {
        grid: *grid,
        gains,
        value,
    })
}

/// The value as one symmetric matrix over `(δx, δu_{k-1}, …, δu_{k-l}, 1)`,
/// zero-padded where a pending slot lies beyond the horizon.
pub fn assemble_gamma(value: &ValueCoeffs, grid: &TimeGrid, control_dim: usize) -> DMatrix<f64> {
    let n = value.vx.len();
    let l = grid.delay_steps;
    let d = control_dim;
    let size = n + l * d + 1;
    let mut gamma = DMatrix::zeros(size, size);
    let last = size - 1;
    // Register position q holds δu_{k-1-q}, i.e. pending slot i = l-1-q.
    let offset_of = |i: usize| n + (l - 1 - i) * d;

    gamma.view_mut((0, 0), (n, n)).copy_from(&value.vxx);
    gamma.view_mut((0, last), (n, 1)).copy_from(&value.vx);
    gamma
        .view_mut((last, 0), (1, n))
        .copy_from(&value.vx.transpose());
    gamma[(last, last)] = value.offset;
    for i in 0..value.pending() {
        let oi = offset_of(i);
        gamma.view_mut((0, oi), (n, d)).copy_from(&value.vxw[i]);
        gamma
            .view_mut((oi, 0), (d, n))
            .copy_from(&value.vxw[i].transpose());
        gamma.view_mut((oi, last), (d, 1)).copy_from(&value.vw[i]);
        gamma
            .view_mut((last, oi), (1, d))
            .copy_from(&value.vw[i].transpose());
        for j in 0..value.pending() {
            let oj = offset_of(j);
            gamma.view_mut((oi, oj), (d, d)).copy_from(&value.vww[i][j]);
        }
    }
    gamma
}

/// Result of auditing one policy against the positivity properties of the recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityAudit {
    /// Worst `min_eig(H_k) - (min_eig(E_k) - 1e-8 ‖H_k‖)`; negative means a violation.
    pub hessian_margin: f64,
    /// Worst `min_eig(Γ_k) / ‖Γ_k‖`.
    pub gamma_ratio: f64,
}

impl PositivityAudit {
    pub fn passed(&self, gamma_tol: f64) -> bool {
        self.hessian_margin >= 0.0 && self.gamma_ratio >= -gamma_tol
    }
}

/// Checks that every `H_k` dominates the control weight and every value
/// matrix `Γ_k` is positive semidefinite.
pub fn audit_positivity(policy: &Policy, quads: &[QuadStage]) -> PositivityAudit {
    let mut hessian_margin = f64::INFINITY;
    for (k, g) in policy.gains.iter().enumerate() {
        let floor = linalg::min_eigenvalue(&quads[k].luu) - 1e-8 * g.hessian.norm();
        hessian_margin = hessian_margin.min(linalg::min_eigenvalue(&g.hessian) - floor);
    }
    let d = policy
        .gains
        .first()
        .map(|g| g.feedforward.len())
        .unwrap_or(0);
    let mut gamma_ratio = f64::INFINITY;
    for v in &policy.value {
        let gamma = assemble_gamma(v, &policy.grid, d);
        let norm = gamma.norm();
        let ratio = if norm > 0.0 {
            linalg::min_eigenvalue(&gamma) / norm
        } else {
            0.0
        };
        gamma_ratio = gamma_ratio.min(ratio);
    }
    PositivityAudit {
        hessian_margin,
        gamma_ratio,
    }
}
