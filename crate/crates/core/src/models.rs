//! Example systems: an affine model given by matrices, a delayed point-mass
//! reaching model, and a damped pendulum with sinusoidal drift.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::problem::{DelayedSystem, DiffusionJacobians, Dims, DriftJacobians};

/// `f = A x + B0 u + B1 u_delayed`, with diffusion columns
/// `F_j = offset_j + G0_j u + G1_j u_delayed`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    /// `n×p`, one column per noise channel.
    pub noise_offset: DMatrix<f64>,
    pub noise_control: Vec<DMatrix<f64>>,
    pub noise_delayed: Vec<DMatrix<f64>>,
}

impl LinearSystem {
    /// A noise-free affine system.
    pub fn new(a: DMatrix<f64>, b0: DMatrix<f64>, b1: DMatrix<f64>) -> Self {
        let n = a.nrows();
        Self {
            a,
            b0,
            b1,
            noise_offset: DMatrix::zeros(n, 0),
            noise_control: Vec::new(),
            noise_delayed: Vec::new(),
        }
    }

    pub fn with_noise(
        mut self,
        offset: DMatrix<f64>,
        control: Vec<DMatrix<f64>>,
        delayed: Vec<DMatrix<f64>>,
    ) -> Self {
        assert_eq!(offset.ncols(), control.len());
        assert_eq!(offset.ncols(), delayed.len());
        self.noise_offset = offset;
        self.noise_control = control;
        self.noise_delayed = delayed;
        self
    }
}

impl DelayedSystem for LinearSystem {
    fn dims(&self) -> Dims {
        Dims {
            state: self.a.nrows(),
            control: self.b0.ncols(),
            noise: self.noise_offset.ncols(),
        }
    }

    fn drift(&self, x: &DVector<f64>, u: &DVector<f64>, ud: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b0 * u + &self.b1 * ud
    }

    fn diffusion(&self, u: &DVector<f64>, ud: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.noise_offset.clone();
        for j in 0..out.ncols() {
            let col = &self.noise_control[j] * u + &self.noise_delayed[j] * ud;
            let mut target = out.column_mut(j);
            target += col;
        }
        out
    }

    fn drift_jacobians(
        &self,
        _: &DVector<f64>,
        _: &DVector<f64>,
        _: &DVector<f64>,
    ) -> Option<DriftJacobians> {
        Some(DriftJacobians {
            state: self.a.clone(),
            control: self.b0.clone(),
            delayed: self.b1.clone(),
        })
    }

    fn diffusion_jacobians(
        &self,
        _: &DVector<f64>,
        _: &DVector<f64>,
    ) -> Option<DiffusionJacobians> {
        Some(DiffusionJacobians {
            control: self.noise_control.clone(),
            delayed: self.noise_delayed.clone(),
        })
    }
}

/// One-dimensional point mass pushed by a delayed force.
///
/// State `(position, velocity)`, control `force`. Only the delayed force
/// reaches the mass, and it carries signal-dependent noise:
/// `f = (v, (u_d - b v) / m)`, `F = (0, σ u_d / m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReachModel {
    pub mass: f64,
    pub damping: f64,
    pub noise: f64,
}

impl Default for ReachModel {
    fn default() -> Self {
        Self {
            mass: 1.0,
            damping: 0.1,
            noise: 0.2,
        }
    }
}

impl ReachModel {
    pub fn is_valid(&self) -> bool {
        self.mass > 0.0 && self.damping >= 0.0 && self.noise >= 0.0
    }
}

impl DelayedSystem for ReachModel {
    fn dims(&self) -> Dims {
        Dims {
            state: 2,
            control: 1,
            noise: 1,
        }
    }

    fn drift(&self, x: &DVector<f64>, _u: &DVector<f64>, ud: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[1], (ud[0] - self.damping * x[1]) / self.mass])
    }

    fn diffusion(&self, _u: &DVector<f64>, ud: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[0.0, self.noise * ud[0] / self.mass])
    }

    fn drift_jacobians(
        &self,
        _: &DVector<f64>,
        _: &DVector<f64>,
        _: &DVector<f64>,
    ) -> Option<DriftJacobians> {
        Some(DriftJacobians {
            state: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -self.damping / self.mass]),
            control: DMatrix::zeros(2, 1),
            delayed: DMatrix::from_column_slice(2, 1, &[0.0, 1.0 / self.mass]),
        })
    }

    fn diffusion_jacobians(
        &self,
        _: &DVector<f64>,
        _: &DVector<f64>,
    ) -> Option<DiffusionJacobians> {
        Some(DiffusionJacobians {
            control: vec![DMatrix::zeros(2, 1)],
            delayed: vec![DMatrix::from_column_slice(
                2,
                1,
                &[0.0, self.noise / self.mass],
            )],
        })
    }

    fn state_labels(&self) -> Vec<String> {
        vec![String::from("position"), String::from("velocity")]
    }

    fn control_labels(&self) -> Vec<String> {
        vec![String::from("force")]
    }
}

/// Damped pendulum driven by a delayed torque:
/// `f = (ω, -k sin θ - b ω + u_d)`, `F = (0, σ0 u + σ1 u_d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumModel {
    pub stiffness: f64,
    pub damping: f64,
    pub noise_current: f64,
    pub noise_delayed: f64,
}

impl Default for PendulumModel {
    fn default() -> Self {
        Self {
            stiffness: 9.81,
            damping: 0.5,
            noise_current: 0.05,
            noise_delayed: 0.1,
        }
    }
}

impl DelayedSystem for PendulumModel {
    fn dims(&self) -> Dims {
        Dims {
            state: 2,
            control: 1,
            noise: 1,
        }
    }

    fn drift(&self, x: &DVector<f64>, _u: &DVector<f64>, ud: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![
            x[1],
            -self.stiffness * libm::sin(x[0]) - self.damping * x[1] + ud[0],
        ])
    }

    fn diffusion(&self, u: &DVector<f64>, ud: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(
            2,
            1,
            &[0.0, self.noise_current * u[0] + self.noise_delayed * ud[0]],
        )
    }

    fn drift_jacobians(
        &self,
        x: &DVector<f64>,
        _: &DVector<f64>,
        _: &DVector<f64>,
    ) -> Option<DriftJacobians> {
        Some(DriftJacobians {
            state: DMatrix::from_row_slice(
                2,
                2,
                &[0.0, 1.0, -self.stiffness * libm::cos(x[0]), -self.damping],
            ),
            control: DMatrix::zeros(2, 1),
            delayed: DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        })
    }

    fn diffusion_jacobians(
        &self,
        _: &DVector<f64>,
        _: &DVector<f64>,
    ) -> Option<DiffusionJacobians> {
        Some(DiffusionJacobians {
            control: vec![DMatrix::from_column_slice(2, 1, &[0.0, self.noise_current])],
            delayed: vec![DMatrix::from_column_slice(2, 1, &[0.0, self.noise_delayed])],
        })
    }

    fn state_labels(&self) -> Vec<String> {
        vec![String::from("angle"), String::from("angular_velocity")]
    }

    fn control_labels(&self) -> Vec<String> {
        vec![String::from("torque")]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reach_model_at_rest_has_no_acceleration() {
        let m = ReachModel::default();
        let zero = DVector::zeros(1);
        let f = m.drift(&DVector::zeros(2), &zero, &zero);
        assert_eq!(f, DVector::zeros(2));
        assert_eq!(m.diffusion(&zero, &zero), DMatrix::zeros(2, 1));
    }

    #[test]
    fn reach_model_ignores_current_force() {
        let m = ReachModel::default();
        let x = DVector::from_vec(vec![0.0, 1.0]);
        let f = m.drift(
            &x,
            &DVector::from_element(1, 5.0),
            &DVector::from_element(1, 2.0),
        );
        // (v, (2 - 0.1·1)/1)
        assert_eq!(f, DVector::from_vec(vec![1.0, 1.9]));
    }

    #[test]
    fn linear_diffusion_is_affine_per_column() {
        let sys = LinearSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 1),
        )
        .with_noise(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]),
            vec![
                DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
                DMatrix::zeros(2, 1),
            ],
            vec![
                DMatrix::zeros(2, 1),
                DMatrix::from_column_slice(2, 1, &[0.0, 3.0]),
            ],
        );
        let f = sys.diffusion(
            &DVector::from_element(1, 2.0),
            &DVector::from_element(1, -1.0),
        );
        assert_eq!(f, DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -1.0]));
    }
}
