use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::diffusion::{example, train_diffusion};
use super::*;
use crate::data::{TrajMeta, Trajectory};
use crate::error::KoapError;
use crate::numerics::grad_check;

fn tiny_arch(steps: usize) -> DiffusionArch {
    DiffusionArch {
        hidden: vec![16],
        horizon: 3,
        diffusion_steps: steps,
        ..DiffusionArch::planner(2)
    }
}

fn zeroed(arch: DiffusionArch) -> DiffusionModel {
    let mut m = DiffusionModel::new(arch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    m.params.values_mut().iter_mut().for_each(|v| *v = 0.0);
    m
}

#[test]
fn first_plan_row_is_the_current_state() {
    let m = DiffusionModel::new(tiny_arch(5), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let x = vec![0.123_456_789_012_345_6, -9.876_543_210_987_654];
    let h = vec![vec![0.1, 0.2], vec![0.3, 0.4]];
    let plan = sample_plan(&m, &x, &h, 7).unwrap();
    assert_eq!(plan.states.len(), 4);
    assert_eq!(plan.current(), x.as_slice());
    assert_eq!(plan.future().len(), 3);
    assert!(plan
        .states
        .iter()
        .all(|s| s.len() == 2 && s.iter().all(|v| v.is_finite())));
}

#[test]
fn single_step_zero_denoiser_closed_form() {
    let m = zeroed(tiny_arch(1));
    let x = vec![1.0, -2.0];
    let h = vec![vec![0.0, 0.0]; 2];
    let plan = sample_plan(&m, &x, &h, 42).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let alpha = 1.0 - 1e-4;
    for (j, row) in plan.future().iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            let expected = x[i] + z / f64::sqrt(alpha);
            assert!((v - expected).abs() < 1e-12, "row {j} dim {i}: {v} vs {expected}");
        }
    }
}

#[test]
fn sampling_is_seeded() {
    let m = DiffusionModel::new(tiny_arch(10), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let h = vec![vec![0.0, 0.0]; 2];
    let a = sample_plan(&m, &[0.5, 0.5], &h, 1).unwrap();
    assert_eq!(a, sample_plan(&m, &[0.5, 0.5], &h, 1).unwrap());
    assert_ne!(a, sample_plan(&m, &[0.5, 0.5], &h, 2).unwrap());
}

#[test]
fn conditioning_is_validated() {
    let m = zeroed(tiny_arch(2));
    assert!(matches!(
        sample_plan(&m, &[0.0, 0.0], &[vec![0.0, 0.0]], 0),
        Err(KoapError::Window(_))
    ));
    assert!(matches!(
        sample_plan(&m, &[0.0], &vec![vec![0.0, 0.0]; 2], 0),
        Err(KoapError::Dimension { .. })
    ));
    let policy = zeroed(DiffusionArch::policy(2, 1));
    assert!(sample_plan(&policy, &[0.0, 0.0], &vec![vec![0.0, 0.0]; 2], 0).is_err());
    let acts = policy.sample_target(&vec![vec![0.0, 0.0]; 2], &[0.0, 0.0], 0).unwrap();
    assert_eq!(acts.len(), 12);
    assert!(acts.iter().all(|a| a.len() == 1));
}

#[test]
fn noise_loss_gradients_match_finite_differences() {
    let m = DiffusionModel::new(tiny_arch(4), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let cond = vec![vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.4]; 2];
    let noisy = crate::numerics::Mat::from_rows(&[[0.1, 0.2, -0.3, 0.4, 0.0, 0.7], [0.5, -0.1, 0.2, 0.3, -0.6, 0.1]]);
    let noise = crate::numerics::Mat::from_rows(&[[1.0, -1.0, 0.5, 0.0, 0.2, 0.1], [0.3, 0.3, -0.2, 0.9, 0.1, 0.0]]);
    let err = grad_check(
        &|tape: &mut crate::numerics::Tape, p: &crate::numerics::ParamVector| {
            m.noise_loss_tape(tape, p, &cond, &noisy, &[1, 3], &noise)
        },
        &m.params,
        1e-6,
    )
    .unwrap();
    assert!(err <= 1e-4, "gradient mismatch {err}");
}

fn line_trajs(n: usize) -> Vec<Trajectory> {
    (0..n)
        .map(|i| {
            let v = [0.1 + 0.01 * i as f64, -0.05];
            Trajectory {
                states: (0..20).map(|t| vec![v[0] * t as f64, v[1] * t as f64]).collect(),
                actions: None,
                meta: TrajMeta::default(),
            }
        })
        .collect()
}

#[test]
fn training_reduces_noise_prediction_loss() {
    let mut cfg = DiffusionConfig::planner(2);
    cfg.arch = tiny_arch(10);
    cfg.arch.hidden = vec![32, 32];
    cfg.train.steps = 400;
    cfg.train.batch_size = 32;
    cfg.train.log_every = 50;
    cfg.train.adam.lr = 3e-3;
    let (model, log) = train_planner(&line_trajs(8), &cfg).unwrap();
    let first = log.epoch_losses[0];
    let last = log.last().unwrap();
    assert!(last < 0.6 * first, "loss {first} -> {last}");

    let again = train_planner(&line_trajs(8), &cfg).unwrap().0;
    assert_eq!(model.params, again.params);
}

#[test]
fn empty_or_mismatched_inputs_are_rejected() {
    let cfg = DiffusionConfig::planner(2);
    assert!(train_planner(&[], &cfg).is_err());
    assert!(train_diffusion(&[], &cfg, "t").is_err());
    assert!(matches!(
        train_action_diffusion(&line_trajs(2), &DiffusionConfig::policy(2, 1)),
        Err(KoapError::LabeledData(_))
    ));
    let _ = example(vec![], vec![]);
}

#[test]
fn checkpoint_roundtrip() {
    let m = DiffusionModel::new(tiny_arch(3), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("planner.ckpt");
    m.save(&path).unwrap();
    let back = DiffusionModel::load(&path).unwrap();
    assert_eq!(back, m);
    let h = vec![vec![0.0, 0.0]; 2];
    assert_eq!(
        sample_plan(&m, &[0.2, 0.1], &h, 5).unwrap(),
        sample_plan(&back, &[0.2, 0.1], &h, 5).unwrap()
    );
    assert!(crate::koopman::KoapModel::load(&path).is_err());
}
