//! Problems shared by the integration tests.
#![allow(dead_code)]

use delay_ilqr::models::{LinearSystem, PendulumModel, ReachModel};
use delay_ilqr::{DMatrix, DVector, Problem, Weight};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    })
}

/// Point-mass reach: 0.1 m in 0.5 s with a 0.1 s input delay.
pub fn reach_problem() -> Problem<ReachModel> {
    Problem {
        system: ReachModel::default(),
        tau: 0.1,
        t_final: 0.5,
        x0: DVector::zeros(2),
        target: DVector::from_vec(vec![0.1, 0.0]),
        terminal_weight: DMatrix::from_diagonal(&DVector::from_vec(vec![1e3, 1e2])),
        state_weight: Weight::Constant(DMatrix::zeros(2, 2)),
        control_weight: Weight::Constant(DMatrix::identity(1, 1) * 1e-2),
    }
}

/// Swing a damped pendulum from 1 rad back to rest with a 0.1 s torque delay.
pub fn pendulum_problem() -> Problem<PendulumModel> {
    Problem {
        system: PendulumModel::default(),
        tau: 0.1,
        t_final: 1.0,
        x0: DVector::from_vec(vec![1.0, 0.0]),
        target: DVector::zeros(2),
        terminal_weight: DMatrix::identity(2, 2) * 10.0,
        state_weight: Weight::Constant(DMatrix::identity(2, 2)),
        control_weight: Weight::Constant(DMatrix::identity(1, 1) * 0.1),
    }
}

/// Random continuous-time linear problem on a `steps`-step grid with
/// `dt = 1 / steps` and a delay of 1 to 4 steps.
pub fn random_linear_problem(seed: u64, noisy: bool, steps: usize) -> Problem<LinearSystem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4);
    let d = rng.random_range(1..=3);
    let p = rng.random_range(1..=3);
    let l = rng.random_range(1..=4usize);
    let a = normal(&mut rng, n, n, 0.7);
    let b0 = normal(&mut rng, n, d, 0.7);
    let b1 = normal(&mut rng, n, d, 0.7);
    let mut system = LinearSystem::new(a, b0, b1);
    if noisy {
        let offset = normal(&mut rng, n, p, 0.2);
        let control = (0..p).map(|_| normal(&mut rng, n, d, 0.3)).collect();
        let delayed = (0..p).map(|_| normal(&mut rng, n, d, 0.3)).collect();
        system = system.with_noise(offset, control, delayed);
    }
    let g = normal(&mut rng, n, n, 0.5);
    let dt = 1.0 / steps as f64;
    Problem {
        system,
        tau: l as f64 * dt,
        t_final: 1.0,
        x0: normal(&mut rng, n, 1, 1.0).column(0).into_owned(),
        target: normal(&mut rng, n, 1, 1.0).column(0).into_owned(),
        terminal_weight: DMatrix::identity(n, n) * 5.0,
        state_weight: Weight::Constant(DMatrix::identity(n, n) + &g * g.transpose()),
        control_weight: Weight::Constant(DMatrix::identity(d, d) * 0.2),
    }
}
