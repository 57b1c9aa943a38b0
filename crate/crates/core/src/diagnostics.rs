//! Gradient verification of every training loss on random small instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{nonlinear_config, ControllerConfig, DdModel, FsqSpec, LapoModel, VaeControllerModel};
use crate::data::{EndHandling, StateWindow, Window, WindowSpec};
use crate::error::Result;
use crate::koopman::{loss_terms, total_loss_tape, KoapArch, KoapModel, LossVars, LossWeights};
use crate::numerics::{grad_check, Mat, ParamVector, RecurrentCell, Tape, Var};
use crate::planner::{DiffusionArch, DiffusionModel};

/// Worst relative disagreement between the analytic gradient of one loss
/// and central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub loss: &'static str,
    pub max_rel_error: f64,
}

const EPS: f64 = 1e-6;

fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

fn random_windows(
    rng: &mut ChaCha8Rng,
    spec: WindowSpec,
    d: usize,
    a: usize,
    labeled: usize,
    unlabeled: usize,
) -> Result<Vec<Window>> {
    (0..labeled + unlabeled)
        .map(|i| {
            let states = (0..spec.len())
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let actions = (i < labeled).then(|| {
                (0..spec.horizon)
                    .map(|_| (0..a).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect()
            });
            Ok(Window {
                states: StateWindow::new(states, spec.history, spec.horizon)?,
                actions,
            })
        })
        .collect()
}

fn koap_checks(seed: u64, cell: RecurrentCell, out: &mut Vec<GradCheck>, tag: [&'static str; 4]) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, a) = (3, 1);
    let mut arch = KoapArch::for_dims(d, a);
    arch.latent_dim = 6;
    arch.encoder_hidden = vec![5];
    arch.seq_hidden = 4;
    arch.cell = cell;
    arch.window = WindowSpec {
        history: 1,
        horizon: 3,
        end: EndHandling::Discard,
    };
    let model = KoapModel::new(arch.clone(), &mut rng)?;
    let windows = random_windows(&mut rng, arch.window, d, a, 2, 2)?;
    let refs: Vec<&Window> = windows.iter().collect();
    let batch = model.prepare(&refs)?;
    let (model, batch) = (&model, &batch);
    let term = |pick: fn(&LossVars) -> Option<Var>| {
        move |t: &mut Tape, p: &ParamVector| {
            let terms = loss_terms(model, t, p, batch)?;
            Ok(pick(&terms).expect("labeled windows present"))
        }
    };
    let checks: [(&'static str, f64); 4] = [
        (tag[0], grad_check(&term(|v| Some(v.recon)), &model.params, EPS)?),
        (tag[1], grad_check(&term(|v| Some(v.kpm)), &model.params, EPS)?),
        (tag[2], grad_check(&term(|v| v.action), &model.params, EPS)?),
        (
            tag[3],
            grad_check(
                &|t: &mut Tape, p: &ParamVector| total_loss_tape(model, t, p, batch, &LossWeights::default()),
                &model.params,
                EPS,
            )?,
        ),
    ];
    out.extend(
        checks
            .into_iter()
            .map(|(loss, max_rel_error)| GradCheck { loss, max_rel_error }),
    );
    Ok(())
}

/// Run the gradient check of every training loss. Instances use state
/// dimension at most 4 and latent dimension at most 8.
pub fn gradient_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    koap_checks(
        seed,
        RecurrentCell::Gru,
        &mut out,
        [
            "koap reconstruction",
            "koap latent dynamics",
            "koap action prediction",
            "koap total",
        ],
    )?;
    koap_checks(
        seed + 1,
        RecurrentCell::Lstm,
        &mut out,
        [
            "koap reconstruction (lstm)",
            "koap latent dynamics (lstm)",
            "koap action prediction (lstm)",
            "koap total (lstm)",
        ],
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let (d, a) = (2, 1);
    let window = WindowSpec {
        history: 2,
        horizon: 3,
        end: EndHandling::Discard,
    };
    let flat = window.len() * d;

    let diff = DiffusionModel::new(
        DiffusionArch {
            hidden: vec![16],
            horizon: 3,
            diffusion_steps: 4,
            ..DiffusionArch::planner(d)
        },
        &mut rng,
    )?;
    let cond: Vec<Vec<f64>> = (0..2)
        .map(|_| random_mat(&mut rng, 1, (window.history + 1) * d).data)
        .collect();
    let noisy = random_mat(&mut rng, 2, window.horizon * d);
    let noise = random_mat(&mut rng, 2, window.horizon * d);
    out.push(GradCheck {
        loss: "diffusion noise prediction",
        max_rel_error: grad_check(
            &|t: &mut Tape, p: &ParamVector| diff.noise_loss_tape(t, p, &cond, &noisy, &[1, 3], &noise),
            &diff.params,
            EPS,
        )?,
    });

    let x = random_mat(&mut rng, 3, flat);
    let y = random_mat(&mut rng, 3, window.horizon * a);
    let dd = DdModel::new(d, a, window, &[6], &mut rng)?;
    out.push(GradCheck {
        loss: "dd supervised",
        max_rel_error: grad_check(
            &|t: &mut Tape, p: &ParamVector| dd.loss_tape(t, p, &x, &y),
            &dd.params,
            EPS,
        )?,
    });

    let vae = VaeControllerModel::new(d, a, 4, window, &[6], 0.1, &mut rng)?;
    let eps = random_mat(&mut rng, 3, 4);
    out.push(GradCheck {
        loss: "vae elbo",
        max_rel_error: grad_check(
            &|t: &mut Tape, p: &ParamVector| Ok(vae.vae_loss_tape(t, p, &x, &eps)?.total),
            &vae.params,
            EPS,
        )?,
    });
    out.push(GradCheck {
        loss: "vae action head",
        max_rel_error: grad_check(
            &|t: &mut Tape, p: &ParamVector| vae.head_loss_tape(t, p, &x, &y),
            &vae.params,
            EPS,
        )?,
    });

    let lapo = LapoModel::new(d, a, 4, window, &[6], 5, FsqSpec::new(vec![3, 5])?, &mut rng)?;
    let lw = random_windows(&mut rng, window, d, a, 0, 3)?;
    let lrefs: Vec<&StateWindow> = lw.iter().map(|w| &w.states).collect();
    out.push(GradCheck {
        loss: "lapo stage one",
        max_rel_error: grad_check(
            &|t: &mut Tape, p: &ParamVector| lapo.stage1_loss(t, p, &lrefs, true),
            &lapo.params,
            EPS,
        )?,
    });

    let mut ccfg = ControllerConfig::for_dims(d, a);
    ccfg.koap.arch.encoder_hidden = vec![5];
    ccfg.koap.arch.latent_dim = 4;
    ccfg.koap.arch.seq_hidden = 4;
    ccfg.koap.arch.window = window;
    ccfg.nonlinear_hidden = vec![5];
    let ncfg = nonlinear_config(&ccfg);
    let nl = KoapModel::new(ncfg.arch.clone(), &mut rng)?;
    let nw = random_windows(&mut rng, window, d, a, 2, 1)?;
    let nrefs: Vec<&Window> = nw.iter().collect();
    let nbatch = nl.prepare(&nrefs)?;
    out.push(GradCheck {
        loss: "nonlinear variant total",
        max_rel_error: grad_check(
            &|t: &mut Tape, p: &ParamVector| total_loss_tape(&nl, t, p, &nbatch, &ncfg.weights),
            &nl.params,
            EPS,
        )?,
    });
    Ok(out)
}
