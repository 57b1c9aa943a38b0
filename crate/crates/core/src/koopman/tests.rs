use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{EndHandling, StateWindow, TrajMeta, Trajectory, Window, WindowSpec};
use crate::error::KoapError;
use crate::numerics::{grad_check, Mat, Tape};

fn identity_model(d: usize, history: usize, horizon: usize) -> KoapModel {
    let mut arch = KoapArch::for_dims(d, 1);
    arch.latent_dim = d;
    arch.encoder_hidden = vec![];
    arch.window = WindowSpec {
        history,
        horizon,
        end: EndHandling::Discard,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = KoapModel::new(arch, &mut rng).unwrap();
    let eye = Mat::identity(d).data;
    for name in ["enc.w0", "dec.w0"] {
        let seg = model.params.segment(name).unwrap().clone();
        model.params.get_mut(&seg).copy_from_slice(&eye);
    }
    // Latent-action predictor outputs zero.
    for seg in model.params.layout().to_vec() {
        if seg.name.starts_with("f.") {
            model.params.get_mut(&seg).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    model
}

fn window(states: Vec<Vec<f64>>, history: usize, horizon: usize, actions: Option<Vec<Vec<f64>>>) -> Window {
    Window {
        states: StateWindow::new(states, history, horizon).unwrap(),
        actions,
    }
}

#[test]
fn identity_encoder_is_identity() {
    let model = identity_model(3, 2, 12);
    assert_eq!(model.encode(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
}

#[test]
fn encode_shape_and_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = KoapModel::new(KoapArch::for_dims(2, 2), &mut rng).unwrap();
    assert_eq!(model.encode(&[0.1, 0.2]).unwrap().len(), 8);
    assert!(matches!(model.encode(&[0.1]), Err(KoapError::Dimension { .. })));
}

#[test]
fn koopman_step_examples() {
    let mut model = identity_model(2, 2, 12);
    assert_eq!(model.koopman_step(&[0.3, -0.4], &[0.0, 0.0]).unwrap(), vec![0.3, -0.4]);
    model
        .set_koopman_matrix(&Mat::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]))
        .unwrap();
    assert_eq!(model.koopman_step(&[1.0, 0.0], &[0.5, 0.0]).unwrap(), vec![0.5, -1.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn koopman_step_is_linear(
        k in proptest::collection::vec(-2.0f64..2.0, 9),
        z1 in proptest::collection::vec(-3.0f64..3.0, 3),
        z2 in proptest::collection::vec(-3.0f64..3.0, 3),
        u1 in proptest::collection::vec(-3.0f64..3.0, 3),
        u2 in proptest::collection::vec(-3.0f64..3.0, 3),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let mut model = identity_model(3, 2, 12);
        model.set_koopman_matrix(&Mat::from_vec(3, 3, k)).unwrap();
        let mix = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect::<Vec<_>>();
        let lhs = model.koopman_step(&mix(&z1, &z2), &mix(&u1, &u2)).unwrap();
        let s1 = model.koopman_step(&z1, &u1).unwrap();
        let s2 = model.koopman_step(&z2, &u2).unwrap();
        let rhs = mix(&s1, &s2);
        for (l, r) in lhs.iter().zip(&rhs) {
            prop_assert!((l - r).abs() <= 1e-9);
        }
    }

    #[test]
    fn action_decoder_is_affine(
        u1 in proptest::collection::vec(-3.0f64..3.0, 8),
        u2 in proptest::collection::vec(-3.0f64..3.0, 8),
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = KoapModel::new(KoapArch::for_dims(2, 2), &mut rng).unwrap();
        model.layout.action_norm = crate::data::Normalizer { mean: vec![0.3, -1.0], std: vec![2.0, 0.5] };
        let c = vec![0.7, -0.2];
        let w: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        model.set_action_decoder(&w, &c).unwrap();
        let sum: Vec<f64> = u1.iter().zip(&u2).map(|(p, q)| p + q).collect();
        let d1 = model.decode_action(&u1).unwrap();
        let d2 = model.decode_action(&u2).unwrap();
        let d0 = model.decode_action(&[0.0; 8]).unwrap();
        let d12 = model.decode_action(&sum).unwrap();
        for i in 0..2 {
            prop_assert!((d1[i] + d2[i] - d0[i] - d12[i]).abs() <= 1e-9);
        }
    }
}

#[test]
fn zero_weight_decoder_returns_bias() {
    let mut model = identity_model(2, 2, 12);
    model.set_action_decoder(&[0.0, 0.0], &[0.25]).unwrap();
    assert_eq!(model.decode_action(&[5.0, -3.0]).unwrap(), vec![0.25]);
    assert_eq!(model.decode_action(&[0.0, 9.0]).unwrap(), vec![0.25]);
}

#[test]
fn recon_loss_examples() {
    let mut model = identity_model(2, 2, 12);
    let states = vec![vec![1.0, 2.0], vec![-0.5, 0.3]];
    assert_eq!(loss_recon(&model, &states).unwrap(), 0.0);
    let b = model.params.segment("dec.b0").unwrap().clone();
    model.params.get_mut(&b).copy_from_slice(&[1.0, 0.0]);
    assert!((loss_recon(&model, &[vec![0.4, 0.4]]).unwrap() - 1.0).abs() < 1e-12);
    let reversed: Vec<Vec<f64>> = states.iter().rev().cloned().collect();
    assert_eq!(
        loss_recon(&model, &states).unwrap(),
        loss_recon(&model, &reversed).unwrap()
    );
    assert!(loss_recon(&model, &[]).is_err());
}

#[test]
fn kpm_loss_examples() {
    let model = identity_model(2, 2, 3);
    let constant = window(vec![vec![0.4, -0.1]; 6], 2, 3, None);
    assert_eq!(loss_kpm(&model, &[&constant]).unwrap(), 0.0);

    let model = identity_model(1, 0, 1);
    let w = window(vec![vec![0.0], vec![0.3]], 0, 1, None);
    assert!((loss_kpm(&model, &[&w]).unwrap() - 0.09).abs() < 1e-15);
}

#[test]
fn action_loss_examples() {
    let mut model = identity_model(1, 0, 1);
    model.set_action_decoder(&[0.0], &[0.5]).unwrap();
    let w = window(vec![vec![0.0], vec![0.0]], 0, 1, Some(vec![vec![1.0]]));
    assert!((loss_action(&model, &[&w]).unwrap() - 0.25).abs() < 1e-15);

    model.set_action_decoder(&[0.0], &[1.0]).unwrap();
    assert_eq!(loss_action(&model, &[&w]).unwrap(), 0.0);

    let unlabeled = window(vec![vec![0.0], vec![0.0]], 0, 1, None);
    assert!(matches!(
        loss_action(&model, &[&w, &unlabeled]),
        Err(KoapError::LabeledData(_))
    ));
}

fn random_windows(seed: u64, d: usize, labeled: usize, unlabeled: usize, n: usize, k: usize) -> Vec<Window> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..labeled + unlabeled)
        .map(|i| {
            let states = (0..n + 1 + k)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let actions = (i < labeled).then(|| (0..k).map(|_| vec![rng.random_range(-1.0..1.0)]).collect());
            window(states, n, k, actions)
        })
        .collect()
}

fn small_arch(d: usize) -> KoapArch {
    let mut arch = KoapArch::for_dims(d, 1);
    arch.latent_dim = 2 * d;
    arch.encoder_hidden = vec![5];
    arch.seq_hidden = 4;
    arch.window = WindowSpec {
        history: 1,
        horizon: 3,
        end: EndHandling::Discard,
    };
    arch
}

#[test]
fn total_loss_is_weighted_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = KoapModel::new(small_arch(2), &mut rng).unwrap();
    let ws = random_windows(3, 2, 2, 3, 1, 3);
    let refs: Vec<&Window> = ws.iter().collect();
    let parts = loss_parts(&model, &refs).unwrap();
    let zero = LossWeights {
        lambda1: 0.0,
        lambda2: 0.0,
    };
    assert_eq!(total_loss(&model, &refs, &zero).unwrap(), parts.recon);
    let w = LossWeights {
        lambda1: 0.7,
        lambda2: 3.0,
    };
    let expected = parts.recon + 0.7 * parts.kpm + 3.0 * parts.action.unwrap();
    assert!((total_loss(&model, &refs, &w).unwrap() - expected).abs() <= 1e-12);

    let unlabeled: Vec<&Window> = ws[2..].iter().collect();
    let p = loss_parts(&model, &unlabeled).unwrap();
    assert!(p.action.is_none());
    assert!((total_loss(&model, &unlabeled, &w).unwrap() - (p.recon + 0.7 * p.kpm)).abs() <= 1e-12);

    let fixed = LossParts {
        recon: 0.2,
        kpm: 0.3,
        action: Some(0.1),
    };
    let one = LossWeights {
        lambda1: 1.0,
        lambda2: 1.0,
    };
    assert!((fixed.total(&one) - 0.6).abs() < 1e-15);
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    for (cell, dynamics, head) in [
        (
            crate::numerics::RecurrentCell::Gru,
            DynamicsKind::Linear,
            HeadKind::Affine,
        ),
        (
            crate::numerics::RecurrentCell::Lstm,
            DynamicsKind::Linear,
            HeadKind::Affine,
        ),
    ] {
        let mut arch = small_arch(3);
        arch.cell = cell;
        arch.dynamics = dynamics;
        arch.head = head;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = KoapModel::new(arch, &mut rng).unwrap();
        let ws = random_windows(5, 3, 2, 1, 1, 3);
        let refs: Vec<&Window> = ws.iter().collect();
        let batch = model.prepare(&refs).unwrap();
        let weights = LossWeights::default();
        let loss = |t: &mut Tape, p: &crate::numerics::ParamVector| total_loss_tape(&model, t, p, &batch, &weights);
        let err = grad_check(&loss, &model.params, 1e-4).unwrap();
        assert!(err <= 1e-3, "grad check error {err}");
    }
}

#[test]
fn latent_action_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = KoapModel::new(KoapArch::for_dims(2, 2), &mut rng).unwrap();
    let w = StateWindow::new(vec![vec![0.1, 0.2]; 15], 2, 12).unwrap();
    let u = model.predict_latent_actions(&w).unwrap();
    assert_eq!(u.len(), 12);
    assert!(u.iter().all(|v| v.len() == 8));

    let acts = model
        .infer_actions(&vec![vec![0.0, 0.0]; 2], &vec![vec![0.1, 0.1]; 13])
        .unwrap();
    assert_eq!(acts.len(), 12);
    assert!(acts.iter().all(|a| a.len() == 2));
    let again = model
        .infer_actions(&vec![vec![0.0, 0.0]; 2], &vec![vec![0.1, 0.1]; 13])
        .unwrap();
    assert_eq!(acts, again);

    assert!(matches!(
        model.infer_actions(&vec![vec![0.0, 0.0]; 1], &vec![vec![0.1, 0.1]; 13]),
        Err(KoapError::Window(_))
    ));
    let short = StateWindow::new(vec![vec![0.1, 0.2]; 14], 2, 11).unwrap();
    assert!(model.predict_latent_actions(&short).is_err());
}

fn constant_trajs(n: usize, len: usize) -> Vec<Trajectory> {
    (0..n)
        .map(|i| {
            let x = vec![(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()];
            Trajectory {
                states: vec![x; len],
                actions: None,
                meta: TrajMeta::default(),
            }
        })
        .collect()
}

fn fast_config() -> KoapConfig {
    let mut cfg = KoapConfig::for_dims(2, 1);
    cfg.arch.encoder_hidden = vec![16];
    cfg.arch.seq_hidden = 16;
    cfg.train.steps = 300;
    cfg.train.batch_size = 16;
    cfg.train.adam.lr = 3e-3;
    cfg
}

#[test]
fn constant_system_latent_actions_vanish() {
    let dx = constant_trajs(40, 20);
    let mut cfg = fast_config();
    cfg.train.steps = 600;
    // Freezing K at its identity initialisation makes u = 0 the optimum.
    let mut model = crate::koopman::init_model(&dx, &[], &cfg).unwrap();
    let frozen = model.params.mask_prefixes(&["kpm.", KoapModel::HEAD_PREFIX]);
    let mask: Vec<bool> = frozen.into_iter().map(|f| !f).collect();
    let ux = crate::koopman::unlabeled_windows(&dx, &cfg.arch);
    crate::koopman::train_on_windows(&mut model, &ux, &[], &cfg, Some(&mask), "t").unwrap();
    let x = dx[3].states[0].clone();
    let w = StateWindow::new(vec![x.clone(); 15], 2, 12).unwrap();
    let z = model.encode(&x).unwrap();
    let zn: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    for u in model.predict_latent_actions(&w).unwrap() {
        let un: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(un < 0.1 * zn, "|u| = {un}, |z| = {zn}");
    }
}

#[test]
fn unlabeled_training_leaves_decoder_untouched_and_is_deterministic() {
    let dx = constant_trajs(10, 18);
    let mut cfg = fast_config();
    cfg.train.steps = 40;
    let (a, log) = train_koap(&dx, &[], &cfg).unwrap();
    let (b, _) = train_koap(&dx, &[], &cfg).unwrap();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    assert!(log.epoch_losses.iter().all(|l| l.is_finite()));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let init = KoapModel::new(cfg.arch.clone(), &mut rng).unwrap();
    assert_eq!(a.params.snapshot_prefix("head."), init.params.snapshot_prefix("head."));
    assert_ne!(a.params.snapshot_prefix("enc."), init.params.snapshot_prefix("enc."));
}

#[test]
fn empty_observation_set_is_rejected() {
    assert!(train_koap(&[], &[], &fast_config()).is_err());
}

#[test]
fn checkpoint_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = KoapModel::new(KoapArch::for_dims(2, 2), &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    assert_eq!(KoapModel::load(&path).unwrap(), model);
}
