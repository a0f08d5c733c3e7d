//! Backward recursion against the reference solvers on random instances.

use delay_ilqr::backward::{assemble_gamma, audit_positivity, run_backward};
use delay_ilqr::linalg::{self, max_abs_diff};
use delay_ilqr::oracle::augmented::augmented_riccati;
use delay_ilqr::oracle::instances::{Instance, InstanceKind};
use delay_ilqr::oracle::lqr::delay_free_lqr;
use delay_ilqr::oracle::moments::moment_propagation_cost;
use delay_ilqr::oracle::verify::{check_instance, verify_suite};
use delay_ilqr::{DMatrix, LinearStage};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, kind: InstanceKind, dims: (usize, usize, usize, usize, usize)) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d, p, l, k) = dims;
    Instance::with_dims(&mut rng, seed, kind, n, d, p, l, k)
}

fn max_gain_gap(inst: &Instance) -> f64 {
    let policy = run_backward(&inst.stages, &inst.quads, &inst.grid).unwrap();
    let aug = augmented_riccati(&inst.stages, &inst.quads, &inst.grid).unwrap();
    let mut gap = 0.0_f64;
    for (k, g) in policy.gains.iter().enumerate() {
        let r = aug.unfolded(k, g.taps.len());
        gap = gap.max(max_abs_diff(&g.feedback, &r.feedback));
        gap = gap.max((&g.feedforward - &r.feedforward).amax());
        for (a, b) in g.taps.iter().zip(&r.taps) {
            gap = gap.max(max_abs_diff(a, b));
        }
    }
    gap
}

#[test]
fn small_noisy_instance_matches_augmented_gains() {
    let inst = instance(1, InstanceKind::Noisy, (2, 1, 1, 2, 6));
    assert!(max_gain_gap(&inst) <= 1e-8);
}

#[test]
fn deterministic_instance_with_long_delay_matches_augmented_gains() {
    let inst = instance(2, InstanceKind::Deterministic, (2, 1, 0, 3, 8));
    assert!(max_gain_gap(&inst) <= 1e-8);
}

#[test]
fn two_channel_noise_matches_augmented_initial_value() {
    let inst = instance(3, InstanceKind::Noisy, (3, 2, 2, 2, 7));
    let policy = run_backward(&inst.stages, &inst.quads, &inst.grid).unwrap();
    let aug = augmented_riccati(&inst.stages, &inst.quads, &inst.grid).unwrap();
    let v0 = &aug.values[0];
    let n = inst.state_dim();
    let last = v0.nrows() - 1;
    let value = &policy.value[0];
    assert!((value.offset - v0[(last, last)]).abs() <= 1e-8 * v0[(last, last)].abs().max(1.0));
    assert!(max_abs_diff(&value.vxx, &v0.view((0, 0), (n, n)).into_owned()) <= 1e-8);
    for i in 0..n {
        assert!((value.vx[i] - v0[(i, last)]).abs() <= 1e-8);
    }
}

#[test]
fn delay_at_least_horizon_reduces_to_delay_free_lqr() {
    // With l ≥ K the delayed input only ever sees the zero history.
    let inst = instance(4, InstanceKind::Noisy, (2, 2, 2, 6, 5));
    let policy = run_backward(&inst.stages, &inst.quads, &inst.grid).unwrap();
    let reference = delay_free_lqr(&inst.stages, &inst.quads, &inst.grid).unwrap();
    for k in 0..inst.grid.steps {
        let g = &policy.gains[k];
        assert!(max_abs_diff(&g.feedback, &reference.feedback[k]) <= 1e-10);
        assert!((&g.feedforward - &reference.feedforward[k]).amax() <= 1e-10);
        assert!(max_abs_diff(&policy.value[k].vxx, &reference.vxx[k]) <= 1e-10);
    }
    let cost = moment_propagation_cost(&inst.stages, &inst.quads, &inst.grid, &policy.gains);
    assert!((cost - reference.offset[0]).abs() <= 1e-10 * cost.abs().max(1.0));
}

#[test]
fn gamma_is_psd_on_one_hundred_instances() {
    for seed in 0..100 {
        let kind = if seed % 2 == 0 {
            InstanceKind::Noisy
        } else {
            InstanceKind::Deterministic
        };
        let inst = Instance::random(40_000 + seed, kind);
        let policy = run_backward(&inst.stages, &inst.quads, &inst.grid).unwrap();
        let audit = audit_positivity(&policy, &inst.quads);
        assert!(audit.passed(1e-8), "seed {seed}: {audit:?}");
    }
}

#[test]
fn corrupted_recursion_is_detected() {
    let corrupted = |stages: &[LinearStage], quads: &[_], grid: &_| {
        let flipped: Vec<LinearStage> = stages
            .iter()
            .map(|s| LinearStage {
                a: s.a.transpose(),
                ..s.clone()
            })
            .collect();
        run_backward(&flipped, quads, grid)
    };
    let report = verify_suite(7, 5, &corrupted);
    assert!(!report.passed());
    let worst = report
        .instances
        .iter()
        .map(|r| r.gain_deviation)
        .fold(0.0, f64::max);
    assert!(worst > 1e-3, "worst gain deviation {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn value_blocks_are_symmetric(seed in any::<u64>()) {
        let inst = Instance::random(seed, InstanceKind::Noisy);
        let policy = run_backward(&inst.stages, &inst.quads, &inst.grid).unwrap();
        let d = inst.control_dim();
        for v in &policy.value {
            prop_assert!(linalg::is_symmetric(&v.vxx, 0.0));
            for i in 0..v.pending() {
                for j in 0..v.pending() {
                    prop_assert_eq!(&v.vww[i][j], &v.vww[j][i].transpose());
                }
            }
            let gamma = assemble_gamma(v, &inst.grid, d);
            prop_assert_eq!(gamma.clone(), gamma.transpose());
        }
        for g in &policy.gains {
            prop_assert!(g.hessian == g.hessian.transpose());
        }
    }

    #[test]
    fn reported_cost_is_the_policy_expected_cost(seed in any::<u64>()) {
        let inst = Instance::random(seed, InstanceKind::Noisy);
        let policy = run_backward(&inst.stages, &inst.quads, &inst.grid).unwrap();
        let exact = moment_propagation_cost(&inst.stages, &inst.quads, &inst.grid, &policy.gains);
        let j0 = policy.expected_cost();
        prop_assert!((j0 - exact).abs() <= 1e-8 * exact.abs().max(1.0));
    }

    #[test]
    fn every_kind_passes_cross_checks(seed in any::<u64>()) {
        for kind in [InstanceKind::Deterministic, InstanceKind::Noisy, InstanceKind::DelayFree] {
            let report = check_instance(&Instance::random(seed, kind), &run_backward);
            prop_assert!(report.passed(), "{}", report);
        }
    }

    #[test]
    fn pending_slots_past_horizon_carry_no_gain(seed in any::<u64>()) {
        let inst = Instance::random(seed, InstanceKind::Noisy);
        let aug = augmented_riccati(&inst.stages, &inst.quads, &inst.grid).unwrap();
        let (d, l) = (inst.control_dim(), inst.grid.delay_steps);
        for k in 0..inst.grid.steps {
            let full = aug.unfolded(k, l);
            for m in &full.taps[inst.grid.pending(k)..] {
                prop_assert_eq!(m, &DMatrix::zeros(d, d));
            }
        }
    }
}
