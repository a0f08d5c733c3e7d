//! Delay embedding: the state is stacked with the last `l` controls and a
//! constant, `z_k = (δx_k, δu_{k-1}, …, δu_{k-l}, 1)`, which turns the delayed
//! problem into an ordinary one with control-dependent noise.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::backward::{BackwardError, StageGains};
use crate::discretization::{LinearStage, QuadStage, TimeGrid};
use crate::linalg::{self, Regularization};

/// One step of the embedded system:
/// `z' = Z z + U u + Σ_j (N_j z + Nu_j u) ξ_j`, cost `[z; u]ᵀ C [z; u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    pub state_dim: usize,
    pub control_dim: usize,
    pub delay_steps: usize,
    pub z: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub noise_z: Vec<DMatrix<f64>>,
    pub noise_u: Vec<DMatrix<f64>>,
    /// `Czz`, `N×N`.
    pub cost_zz: DMatrix<f64>,
    /// `Cuz`, `d×N`.
    pub cost_uz: DMatrix<f64>,
    /// `Cuu`, `d×d`.
    pub cost_uu: DMatrix<f64>,
}

impl AugmentedSystem {
    /// Size of `z`: `n + l d + 1`.
    pub fn dim(&self) -> usize {
        self.state_dim + self.delay_steps * self.control_dim + 1
    }

    /// Row/column offset of register slot `q` (holding `δu_{k-1-q}`).
    pub fn register(&self, q: usize) -> usize {
        self.state_dim + q * self.control_dim
    }

    pub fn constant(&self) -> usize {
        self.dim() - 1
    }

    pub fn new(lin: &LinearStage, quad: &QuadStage, l: usize) -> Self {
        let n = lin.a.nrows();
        let d = lin.b0.ncols();
        let size = n + l * d + 1;
        let reg = |q: usize| n + q * d;
        let last = size - 1;

        let mut z = DMatrix::zeros(size, size);
        z.view_mut((0, 0), (n, n)).copy_from(&lin.a);
        z.view_mut((0, reg(l - 1)), (n, d)).copy_from(&lin.b1);
        for q in 1..l {
            z.view_mut((reg(q), reg(q - 1)), (d, d))
                .fill_with_identity();
        }
        z[(last, last)] = 1.0;

        let mut u = DMatrix::zeros(size, d);
        u.view_mut((0, 0), (n, d)).copy_from(&lin.b0);
        u.view_mut((reg(0), 0), (d, d)).fill_with_identity();

        let mut noise_z = Vec::new();
        let mut noise_u = Vec::new();
        for j in 0..lin.noise_channels() {
            let mut nz = DMatrix::zeros(size, size);
            nz.view_mut((0, last), (n, 1)).copy_from(&lin.c[j]);
            nz.view_mut((0, reg(l - 1)), (n, d)).copy_from(&lin.c1[j]);
            let mut nu = DMatrix::zeros(size, d);
            nu.view_mut((0, 0), (n, d)).copy_from(&lin.c0[j]);
            noise_z.push(nz);
            noise_u.push(nu);
        }

        let mut cost_zz = DMatrix::zeros(size, size);
        cost_zz.view_mut((0, 0), (n, n)).copy_from(&quad.lxx);
        cost_zz.view_mut((0, last), (n, 1)).copy_from(&quad.lx);
        cost_zz
            .view_mut((last, 0), (1, n))
            .copy_from(&quad.lx.transpose());
        cost_zz[(last, last)] = quad.offset;
        let mut cost_uz = DMatrix::zeros(d, size);
        cost_uz.view_mut((0, last), (d, 1)).copy_from(&quad.lu);

        Self {
            state_dim: n,
            control_dim: d,
            delay_steps: l,
            z,
            u,
            noise_z,
            noise_u,
            cost_zz,
            cost_uz,
            cost_uu: quad.luu.clone(),
        }
    }

    /// Terminal cost over `z`.
    pub fn terminal(quad: &QuadStage, l: usize) -> DMatrix<f64> {
        let n = quad.lxx.nrows();
        let d = quad.lu.len();
        let size = n + l * d + 1;
        let last = size - 1;
        let mut v = DMatrix::zeros(size, size);
        v.view_mut((0, 0), (n, n)).copy_from(&quad.lxx);
        v.view_mut((0, last), (n, 1)).copy_from(&quad.lx);
        v.view_mut((last, 0), (1, n))
            .copy_from(&quad.lx.transpose());
        v[(last, last)] = quad.offset;
        v
    }

    /// Splits `u = K z` into the policy blocks, keeping `pending` taps.
    pub fn unfold(&self, gain: &DMatrix<f64>, pending: usize) -> StageGains {
        let (n, d) = (self.state_dim, self.control_dim);
        let l = self.delay_steps;
        let taps = (0..pending)
            .map(|i| {
                gain.view((0, self.register(l - 1 - i)), (d, d))
                    .into_owned()
            })
            .collect();
        StageGains {
            feedforward: DVector::from_iterator(d, gain.column(self.constant()).iter().copied()),
            feedback: gain.view((0, 0), (d, n)).into_owned(),
            taps,
            hessian: DMatrix::zeros(d, d),
            shift: 0.0,
        }
    }

    /// Packs a policy into `K` with `u = K z`; taps beyond the list stay zero.
    pub fn fold(&self, gains: &StageGains) -> DMatrix<f64> {
        let (n, d) = (self.state_dim, self.control_dim);
        let l = self.delay_steps;
        let mut k = DMatrix::zeros(d, self.dim());
        k.view_mut((0, 0), (d, n)).copy_from(&gains.feedback);
        for (i, m) in gains.taps.iter().enumerate() {
            k.view_mut((0, self.register(l - 1 - i)), (d, d))
                .copy_from(m);
        }
        k.view_mut((0, self.constant()), (d, 1))
            .copy_from(&gains.feedforward);
        k
    }
}

#[derive(Debug, Clone)]
pub struct AugmentedSolution {
    pub systems: Vec<AugmentedSystem>,
    /// `K_k`, `d×N`, for `k = 0..K`.
    pub gains: Vec<DMatrix<f64>>,
    /// `V_k`, `N×N`, for `k = 0..=K`.
    pub values: Vec<DMatrix<f64>>,
}

impl AugmentedSolution {
    /// Gains at step `k` unfolded into the policy blocks.
    pub fn unfolded(&self, k: usize, pending: usize) -> StageGains {
        self.systems[k].unfold(&self.gains[k], pending)
    }
}

/// Riccati recursion on the embedded system:
///
/// ```text
/// Quu = Cuu + UᵀVU + Σ Nu_jᵀ V Nu_j
/// Quz = Cuz + UᵀVZ + Σ Nu_jᵀ V N_j
/// Qzz = Czz + ZᵀVZ + Σ N_jᵀ V N_j
/// K   = -Quu⁻¹ Quz,   V' = Qzz + Quzᵀ K
/// ```
pub fn augmented_riccati(
    stages: &[LinearStage],
    quads: &[QuadStage],
    grid: &TimeGrid,
) -> Result<AugmentedSolution, BackwardError> {
    let l = grid.delay_steps;
    let steps = grid.steps;
    let systems: Vec<AugmentedSystem> = (0..steps)
        .map(|k| AugmentedSystem::new(&stages[k], &quads[k], l))
        .collect();
    let mut values = Vec::with_capacity(steps + 1);
    let mut gains = Vec::with_capacity(steps);
    let mut v = AugmentedSystem::terminal(&quads[steps], l);
    values.push(v.clone());
    let reg = Regularization::default();
    for k in (0..steps).rev() {
        let sys = &systems[k];
        let vz = &v * &sys.z;
        let vu = &v * &sys.u;
        let mut quu = &sys.cost_uu + sys.u.transpose() * &vu;
        let mut quz = &sys.cost_uz + sys.u.transpose() * &vz;
        let mut qzz = &sys.cost_zz + sys.z.transpose() * &vz;
        for (nz, nu) in sys.noise_z.iter().zip(&sys.noise_u) {
            let vnz = &v * nz;
            quu += nu.transpose() * (&v * nu);
            quz += nu.transpose() * &vnz;
            qzz += nz.transpose() * &vnz;
        }
        linalg::symmetrize(&mut quu);
        let factor = linalg::factor_spd(&quu, &reg).map_err(|min_eigenvalue| {
            BackwardError::NotPositiveDefinite {
                step: k,
                min_eigenvalue,
            }
        })?;
        let gain = -factor.solve(&quz);
        v = qzz + quz.transpose() * &gain;
        linalg::symmetrize(&mut v);
        gains.push(gain);
        values.push(v.clone());
    }
    gains.reverse();
    values.reverse();
    Ok(AugmentedSolution {
        systems,
        gains,
        values,
    })
}
