//! The deterministic problem as a single quadratic in `U = (δu_0, …, δu_{K-1})`.
//!
//! With `δx_0 = 0`, every deviation state is linear in `U`: `δx_k = Φ_k U`,
//! `Φ_0 = 0`, `Φ_{k+1} = A_k Φ_k + B0_k P_k + B1_k P_{k-l}` where `P_j`
//! selects `δu_j` (and is zero for `j < 0`).

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::discretization::{LinearStage, QuadStage, TimeGrid};

#[derive(Debug, Clone)]
pub struct BatchSolution {
    pub controls: Vec<DVector<f64>>,
    pub cost: f64,
    /// `Φ_k` for `k = 0..=K`.
    pub maps: Vec<DMatrix<f64>>,
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constant: f64,
}

impl BatchSolution {
    /// `J(U) = constant + 2 gᵀU + UᵀHU`.
    pub fn cost_of(&self, u: &DVector<f64>) -> f64 {
        self.constant + 2.0 * self.gradient.dot(u) + u.dot(&(&self.hessian * u))
    }
}

/// Returns `None` if the stacked Hessian is not positive definite. Noise terms are ignored.
pub fn batch_quadratic_solve(
    stages: &[LinearStage],
    quads: &[QuadStage],
    grid: &TimeGrid,
) -> Option<BatchSolution> {
    let steps = grid.steps;
    let l = grid.delay_steps;
    let n = stages[0].a.nrows();
    let d = stages[0].b0.ncols();
    let total = steps * d;

    let mut maps = Vec::with_capacity(steps + 1);
    maps.push(DMatrix::zeros(n, total));
    for k in 0..steps {
        let s = &stages[k];
        let mut next = &s.a * &maps[k];
        let mut current = next.view_mut((0, k * d), (n, d));
        current += &s.b0;
        if k >= l {
            let mut delayed = next.view_mut((0, (k - l) * d), (n, d));
            delayed += &s.b1;
        }
        maps.push(next);
    }

    let mut hessian = DMatrix::zeros(total, total);
    let mut gradient = DVector::zeros(total);
    let mut constant = 0.0;
    for (k, q) in quads.iter().enumerate() {
        let phi = &maps[k];
        hessian += phi.transpose() * &q.lxx * phi;
        gradient += phi.transpose() * &q.lx;
        constant += q.offset;
        if k < steps {
            let mut block = hessian.view_mut((k * d, k * d), (d, d));
            block += &q.luu;
            let mut rows = gradient.rows_mut(k * d, d);
            rows += &q.lu;
        }
    }
    let h = (&hessian + hessian.transpose()) * 0.5;
    let chol = Cholesky::new(h.clone())?;
    let solution = -chol.solve(&gradient);
    let cost = constant + gradient.dot(&solution);
    let controls = (0..steps)
        .map(|k| solution.rows(k * d, d).into_owned())
        .collect();
    Some(BatchSolution {
        controls,
        cost,
        maps,
        hessian: h,
        gradient,
        constant,
    })
}
