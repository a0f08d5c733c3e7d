//! Finite-horizon LQR with control-dependent noise and no delayed input,
//! written in the usual Q-function form.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::backward::BackwardError;
use crate::discretization::{LinearStage, QuadStage, TimeGrid};
use crate::linalg::{self, Regularization};

#[derive(Debug, Clone)]
pub struct DelayFreeSolution {
    pub feedforward: Vec<DVector<f64>>,
    pub feedback: Vec<DMatrix<f64>>,
    /// Scalar value term for `k = 0..=K`.
    pub offset: Vec<f64>,
    pub vx: Vec<DVector<f64>>,
    pub vxx: Vec<DMatrix<f64>>,
}

/// Ignores `B1` and `C1`; callers are expected to pass stages where both vanish.
pub fn delay_free_lqr(
    stages: &[LinearStage],
    quads: &[QuadStage],
    grid: &TimeGrid,
) -> Result<DelayFreeSolution, BackwardError> {
    let steps = grid.steps;
    let terminal = &quads[steps];
    let mut offset = alloc::vec![terminal.offset];
    let mut vx = alloc::vec![terminal.lx.clone()];
    let mut vxx = alloc::vec![terminal.lxx.clone()];
    let mut feedforward = Vec::with_capacity(steps);
    let mut feedback = Vec::with_capacity(steps);
    let reg = Regularization::default();

    for k in (0..steps).rev() {
        let (lin, q) = (&stages[k], &quads[k]);
        let v0 = *offset.last().unwrap();
        let v1 = vx.last().unwrap();
        let v2 = vxx.last().unwrap();
        let bt = lin.b0.transpose();

        let mut q0 = q.offset + v0;
        let qx = &q.lx + lin.a.transpose() * v1;
        let mut qu = &q.lu + &bt * v1;
        let qxx = &q.lxx + lin.a.transpose() * v2 * &lin.a;
        let qux = &bt * v2 * &lin.a;
        let mut quu = &q.luu + &bt * v2 * &lin.b0;
        for j in 0..lin.noise_channels() {
            let (c, c0) = (&lin.c[j], &lin.c0[j]);
            q0 += c.dot(&(v2 * c));
            qu += c0.transpose() * v2 * c;
            quu += c0.transpose() * v2 * c0;
        }
        linalg::symmetrize(&mut quu);
        let factor = linalg::factor_spd(&quu, &reg).map_err(|min_eigenvalue| {
            BackwardError::NotPositiveDefinite {
                step: k,
                min_eigenvalue,
            }
        })?;
        let iota = -factor.solve_vec(&qu);
        let gain = -factor.solve(&qux);
        let mut next_vxx = qxx + qux.transpose() * &gain;
        linalg::symmetrize(&mut next_vxx);
        offset.push(q0 + qu.dot(&iota));
        vx.push(qx + qux.transpose() * &iota);
        vxx.push(next_vxx);
        feedforward.push(iota);
        feedback.push(gain);
    }
    feedforward.reverse();
    feedback.reverse();
    offset.reverse();
    vx.reverse();
    vxx.reverse();
    Ok(DelayFreeSolution {
        feedforward,
        feedback,
        offset,
        vx,
        vxx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_last_step() {
        let grid = TimeGrid::new(0.1, 1, 1).unwrap();
        let lin = LinearStage::deterministic(scalar(1.0), scalar(1.0), scalar(0.0));
        let quads = [
            QuadStage {
                offset: 0.0,
                lx: DVector::zeros(1),
                lxx: scalar(0.0),
                lu: DVector::zeros(1),
                luu: scalar(1.0),
            },
            QuadStage {
                offset: 0.0,
                lx: DVector::zeros(1),
                lxx: scalar(1.0),
                lu: DVector::zeros(1),
                luu: scalar(0.0),
            },
        ];
        let sol = delay_free_lqr(&[lin], &quads, &grid).unwrap();
        assert!((sol.feedback[0][(0, 0)] + 0.5).abs() < 1e-15);
        assert_eq!(sol.feedforward[0][0], 0.0);
        assert!((sol.vxx[0][(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn no_actuation_gives_zero_gains() {
        let grid = TimeGrid::new(0.1, 3, 1).unwrap();
        let lin = LinearStage::deterministic(scalar(0.8), scalar(0.0), scalar(0.0));
        let q = QuadStage {
            offset: 1.0,
            lx: DVector::from_element(1, 0.5),
            lxx: scalar(2.0),
            lu: DVector::zeros(1),
            luu: scalar(1.0),
        };
        let stages = [lin.clone(), lin.clone(), lin];
        let quads = [q.clone(), q.clone(), q.clone(), q];
        let sol = delay_free_lqr(&stages, &quads, &grid).unwrap();
        assert!(sol.feedback.iter().all(|l| l[(0, 0)] == 0.0));
        assert!(sol.feedforward.iter().all(|i| i[0] == 0.0));
        assert_eq!(sol.offset[0], 4.0);
    }
}
