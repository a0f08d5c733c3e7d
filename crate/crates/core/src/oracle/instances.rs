//! Seeded random LQG instances.
//!
//! Every stage cost is built as `(δx + x̂)ᵀD(δx + x̂) + (δu + û)ᵀE(δu + û) + extra`
//! for random offsets `x̂, û` and `extra ≥ 0`, so each stage quadratic is
//! jointly PSD in `(δx, δu, 1)`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::discretization::{LinearStage, QuadStage, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceKind {
    /// No noise terms.
    Deterministic,
    /// Nonzero `c`, `C0` and `C1`.
    Noisy,
    /// `B1 = 0`, `C1 = 0`, with `c` and `C0` present.
    DelayFree,
}

impl InstanceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InstanceKind::Deterministic => "deterministic",
            InstanceKind::Noisy => "noisy",
            InstanceKind::DelayFree => "delay_free",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: u64,
    pub kind: InstanceKind,
    pub grid: TimeGrid,
    pub stages: Vec<LinearStage>,
    pub quads: Vec<QuadStage>,
}

impl Instance {
    pub fn state_dim(&self) -> usize {
        self.stages[0].a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.stages[0].b0.ncols()
    }

    pub fn noise_dim(&self) -> usize {
        self.stages[0].noise_channels()
    }

    /// Dimensions drawn from `n, d, p ∈ [1, 4]`, `l ∈ [1, 4]`, `K ∈ [l + 2, 12]`.
    pub fn random(seed: u64, kind: InstanceKind) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=4);
        let d = rng.random_range(1..=4);
        let p = match kind {
            InstanceKind::Deterministic => 0,
            _ => rng.random_range(1..=4),
        };
        let l = rng.random_range(1..=4);
        let k = rng.random_range(l + 2..=12);
        Self::with_dims(&mut rng, seed, kind, n, d, p, l, k)
    }

    /// An instance with the given dimensions; `p` is ignored for deterministic instances.
    #[allow(clippy::too_many_arguments)]
    pub fn with_dims(
        rng: &mut ChaCha8Rng,
        seed: u64,
        kind: InstanceKind,
        n: usize,
        d: usize,
        p: usize,
        l: usize,
        steps: usize,
    ) -> Self {
        let p = if kind == InstanceKind::Deterministic {
            0
        } else {
            p
        };
        let grid = TimeGrid::new(0.1, steps, l).expect("valid grid");
        let stages = (0..steps)
            .map(|_| random_stage(rng, kind, n, d, p))
            .collect();
        let mut quads: Vec<QuadStage> = (0..steps).map(|_| random_quad(rng, n, d, false)).collect();
        quads.push(random_quad(rng, n, d, true));
        Self {
            seed,
            kind,
            grid,
            stages,
            quads,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * normal(rng))
}

fn normal_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| scale * normal(rng))
}

fn random_psd(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let g = normal_matrix(rng, dim, dim, 0.5);
    &g * g.transpose()
}

/// Gaussian matrix rescaled so its spectral radius lies in `[0.5, 1.1]`.
fn random_transition(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let target = rng.random_range(0.5..=1.1);
    loop {
        let a = normal_matrix(rng, n, n, 1.0);
        let radius = a
            .complex_eigenvalues()
            .iter()
            .fold(0.0_f64, |acc, z| acc.max(libm::hypot(z.re, z.im)));
        if radius > 1e-6 {
            return a * (target / radius);
        }
    }
}

fn random_stage(
    rng: &mut ChaCha8Rng,
    kind: InstanceKind,
    n: usize,
    d: usize,
    p: usize,
) -> LinearStage {
    let a = random_transition(rng, n);
    let b0 = normal_matrix(rng, n, d, 0.5);
    let b1 = match kind {
        InstanceKind::DelayFree => DMatrix::zeros(n, d),
        _ => normal_matrix(rng, n, d, 0.5),
    };
    let mut stage = LinearStage::deterministic(a, b0, b1);
    for _ in 0..p {
        stage.c.push(normal_vector(rng, n, 0.5));
        stage.c0.push(normal_matrix(rng, n, d, 0.5));
        stage.c1.push(match kind {
            InstanceKind::DelayFree => DMatrix::zeros(n, d),
            _ => normal_matrix(rng, n, d, 0.5),
        });
    }
    stage
}

fn random_quad(rng: &mut ChaCha8Rng, n: usize, d: usize, terminal: bool) -> QuadStage {
    let lxx = random_psd(rng, n);
    let x_hat = normal_vector(rng, n, 1.0);
    let extra = rng.random_range(0.0..1.0);
    let mut offset = x_hat.dot(&(&lxx * &x_hat)) + extra;
    let lx = &lxx * &x_hat;
    let (lu, luu) = if terminal {
        (DVector::zeros(d), DMatrix::zeros(d, d))
    } else {
        let luu = DMatrix::identity(d, d) + random_psd(rng, d);
        let u_hat = normal_vector(rng, d, 1.0);
        offset += u_hat.dot(&(&luu * &u_hat));
        (&luu * &u_hat, luu)
    };
    QuadStage {
        offset,
        lx,
        lxx,
        lu,
        luu,
    }
}
