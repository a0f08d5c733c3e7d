//! Exact expected cost of an affine delayed policy on the linear model.
//!
//! The closed loop is linear in `ζ_k = (δx_k, δu_{k-1}, …, δu_{k-l}, 1)` with
//! noise that is linear in `ζ_k`, so the second moment `W_k = E[ζ_k ζ_kᵀ]`
//! propagates exactly:
//! `W_{k+1} = T W Tᵀ + Σ_j G_j W G_jᵀ`, with `T = Z + U K_k`, `G_j = N_j + Nu_j K_k`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::backward::StageGains;
use crate::discretization::{LinearStage, QuadStage, TimeGrid};
use crate::oracle::augmented::AugmentedSystem;

/// `E[Σ_k cost_k]` under `gains`, starting from `δx_0 = 0` with zero history.
pub fn moment_propagation_cost(
    stages: &[LinearStage],
    quads: &[QuadStage],
    grid: &TimeGrid,
    gains: &[StageGains],
) -> f64 {
    let l = grid.delay_steps;
    let steps = grid.steps;
    let first = AugmentedSystem::new(&stages[0], &quads[0], l);
    let size = first.dim();
    let mut w = DMatrix::zeros(size, size);
    w[(size - 1, size - 1)] = 1.0;
    let mut total = 0.0;
    for k in 0..steps {
        let sys = if k == 0 {
            first.clone()
        } else {
            AugmentedSystem::new(&stages[k], &quads[k], l)
        };
        let gain = sys.fold(&gains[k]);
        let cross = gain.transpose() * &sys.cost_uz;
        let cost =
            &sys.cost_zz + &cross + cross.transpose() + gain.transpose() * &sys.cost_uu * &gain;
        total += (&cost * &w).trace();

        let t = &sys.z + &sys.u * &gain;
        let mut next = &t * &w * t.transpose();
        for (nz, nu) in sys.noise_z.iter().zip(&sys.noise_u) {
            let g = nz + nu * &gain;
            next += &g * &w * g.transpose();
        }
        w = (&next + next.transpose()) * 0.5;
    }
    total + (AugmentedSystem::terminal(&quads[steps], l) * &w).trace()
}

/// Noise-free closed loop on the linear model from `δx_0 = 0`: the control
/// deviations and the cost.
pub fn linear_closed_loop(
    stages: &[LinearStage],
    quads: &[QuadStage],
    grid: &TimeGrid,
    gains: &[StageGains],
) -> (Vec<DVector<f64>>, f64) {
    let l = grid.delay_steps;
    let n = stages[0].a.nrows();
    let d = stages[0].b0.ncols();
    let zero = DVector::zeros(d);
    let mut dx = DVector::zeros(n);
    let mut controls: Vec<DVector<f64>> = Vec::with_capacity(grid.steps);
    let mut cost = 0.0;
    for k in 0..grid.steps {
        let g = &gains[k];
        let mut du = &g.feedforward + &g.feedback * &dx;
        for (i, m) in g.taps.iter().enumerate() {
            if k + i >= l {
                du += m * &controls[k + i - l];
            }
        }
        cost += quads[k].evaluate(&dx, &du);
        let delayed = if k >= l { &controls[k - l] } else { &zero };
        dx = stages[k].predict(&dx, &du, delayed);
        controls.push(du);
    }
    cost += quads[grid.steps].evaluate(&dx, &zero);
    (controls, cost)
}
