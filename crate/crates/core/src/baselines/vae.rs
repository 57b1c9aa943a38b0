//! Window autoencoder trained on observations, with an action head fitted
//! afterwards on the labeled set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{flat_actions, flat_states, labeled_set, stack_rows, ControllerConfig};
use crate::data::{extract_windows, Normalizer, StateWindow, Trajectory, WindowSpec};
use crate::error::{KoapError, Result};
use crate::numerics::{fit, Activation, Mat, Mlp, MlpSpec, ParamVector, Tape, TrainLog, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeLayout {
    pub state_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub window: WindowSpec,
    pub beta: f64,
    encoder: Mlp,
    decoder: Mlp,
    head: Mlp,
    pub state_norm: Normalizer,
    pub action_norm: Normalizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeControllerModel {
    pub params: ParamVector,
    pub layout: VaeLayout,
}

pub struct VaeLossVars {
    pub recon: Var,
    pub kl: Var,
    pub total: Var,
}

impl VaeControllerModel {
    /// Stage-one segments (encoder and decoder) share this prefix.
    pub const STAGE1_PREFIX: &'static str = "vae.";
    pub const HEAD_PREFIX: &'static str = "head.";

    pub fn new<R: Rng>(
        state_dim: usize,
        action_dim: usize,
        latent_dim: usize,
        window: WindowSpec,
        hidden: &[usize],
        beta: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let flat = window.len() * state_dim;
        let mut params = ParamVector::new();
        let widths = |a: usize, b: usize| {
            let mut w = vec![a];
            w.extend(hidden);
            w.push(b);
            MlpSpec::uniform(&w, Activation::Tanh)
        };
        let encoder = Mlp::init(&mut params, "vae.enc", widths(flat, 2 * latent_dim), rng)?;
        let decoder = Mlp::init(&mut params, "vae.dec", widths(latent_dim, flat), rng)?;
        let head = Mlp::init(
            &mut params,
            "head",
            widths(latent_dim, window.horizon * action_dim),
            rng,
        )?;
        Ok(Self {
            params,
            layout: VaeLayout {
                state_dim,
                action_dim,
                latent_dim,
                window,
                beta,
                encoder,
                decoder,
                head,
                state_norm: Normalizer::identity(state_dim),
                action_norm: Normalizer::identity(action_dim),
            },
        })
    }

    fn posterior(&self, tape: &mut Tape, params: &ParamVector, x: Var) -> Result<(Var, Var)> {
        let m = self.layout.latent_dim;
        let h = self.layout.encoder.forward(tape, params, x)?;
        Ok((tape.slice_cols(h, 0, m), tape.slice_cols(h, m, m)))
    }

    /// Reconstruction (mean over window states of squared error) plus
    /// `beta` times the KL divergence to the standard normal prior. `eps`
    /// holds the reparameterisation noise, one row per window.
    pub fn vae_loss_tape(&self, tape: &mut Tape, params: &ParamVector, x: &Mat, eps: &Mat) -> Result<VaeLossVars> {
        let xv = tape.constant(x.clone());
        let (mu, logvar) = self.posterior(tape, params, xv)?;
        let half = tape.scale(logvar, 0.5);
        let std = tape.exp(half);
        let ev = tape.constant(eps.clone());
        let noise = tape.mul(std, ev);
        let z = tape.add(mu, noise);
        let x_hat = self.layout.decoder.forward(tape, params, z)?;
        let diff = tape.sub(x_hat, xv);
        let recon = tape.mean_row_sq_norm(diff);
        let recon = tape.scale(recon, 1.0 / self.layout.window.len() as f64);
        let kl = kl_to_standard_normal(tape, mu, logvar);
        let weighted = tape.scale(kl, self.layout.beta);
        let total = tape.add(recon, weighted);
        Ok(VaeLossVars { recon, kl, total })
    }

    /// Action head on the posterior mean.
    pub(crate) fn head_loss_tape(&self, tape: &mut Tape, params: &ParamVector, x: &Mat, y: &Mat) -> Result<Var> {
        let xv = tape.constant(x.clone());
        let (mu, _) = self.posterior(tape, params, xv)?;
        let pred = self.layout.head.forward(tape, params, mu)?;
        let yv = tape.constant(y.clone());
        let diff = tape.sub(pred, yv);
        let l = tape.mean_row_sq_norm(diff);
        Ok(tape.scale(l, 1.0 / self.layout.window.horizon as f64))
    }

    pub(crate) fn encode_window(&self, states: &[Vec<f64>]) -> Vec<f64> {
        flat_states(&self.layout.state_norm, states)
    }

    /// Reconstruct a window through the posterior mean, raw units.
    pub fn reconstruct(&self, window: &StateWindow) -> Result<Vec<Vec<f64>>> {
        self.check(window)?;
        let mut tape = Tape::new(self.params.len());
        let x = tape.constant(Mat::row_vector(&self.encode_window(&window.states)));
        let (mu, _) = self.posterior(&mut tape, &self.params, x)?;
        let out = self.layout.decoder.forward(&mut tape, &self.params, mu)?;
        Ok(tape
            .value(out)
            .data
            .chunks(self.layout.state_dim)
            .map(|s| self.layout.state_norm.invert(s))
            .collect())
    }

    fn check(&self, window: &StateWindow) -> Result<()> {
        let l = &self.layout;
        if window.states.len() != l.window.len() || window.history != l.window.history {
            return Err(KoapError::Window(format!(
                "expected a window of {} states with history {}",
                l.window.len(),
                l.window.history
            )));
        }
        if window.state_dim() != l.state_dim {
            return Err(KoapError::dim("window state", l.state_dim, window.state_dim()));
        }
        Ok(())
    }

    pub fn predict(&self, window: &StateWindow) -> Result<Vec<Vec<f64>>> {
        self.check(window)?;
        let mut tape = Tape::new(self.params.len());
        let x = tape.constant(Mat::row_vector(&self.encode_window(&window.states)));
        let (mu, _) = self.posterior(&mut tape, &self.params, x)?;
        let out = self.layout.head.forward(&mut tape, &self.params, mu)?;
        Ok(tape
            .value(out)
            .data
            .chunks(self.layout.action_dim)
            .map(|a| self.layout.action_norm.invert(a))
            .collect())
    }

    pub fn infer_actions(&self, history: &[Vec<f64>], plan: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let w = &self.layout.window;
        if history.len() != w.history || plan.len() != w.horizon + 1 {
            return Err(KoapError::Window(format!(
                "controller expects {} history states and a plan of {} states, got {} and {}",
                w.history,
                w.horizon + 1,
                history.len(),
                plan.len()
            )));
        }
        self.predict(&StateWindow::assemble(history, &plan[0], &plan[1..])?)
    }
}

/// `mean over rows of 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)`.
pub fn kl_to_standard_normal(tape: &mut Tape, mu: Var, logvar: Var) -> Var {
    let rows = tape.value(mu).rows.max(1);
    let mu2 = tape.square(mu);
    let var = tape.exp(logvar);
    let a = tape.add(mu2, var);
    let b = tape.sub(a, logvar);
    let c = tape.add_scalar(b, -1.0);
    let s = tape.sum(c);
    tape.scale(s, 0.5 / rows as f64)
}

/// Stage one fits the autoencoder on observation windows; stage two freezes
/// it and fits the action head on labeled windows.
pub fn train_vae_controller(
    dx: &[Trajectory],
    da: &[Trajectory],
    cfg: &ControllerConfig,
) -> Result<(VaeControllerModel, TrainLog)> {
    let arch = &cfg.koap.arch;
    if dx.is_empty() {
        return Err(KoapError::Config("observation set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.koap.train.seed);
    let mut model = VaeControllerModel::new(
        arch.state_dim,
        arch.action_dim,
        arch.latent_dim,
        arch.window,
        &cfg.mlp_hidden,
        cfg.vae_beta,
        &mut rng,
    )?;
    model.layout.state_norm = Normalizer::fit(arch.state_dim, dx.iter().flat_map(|t| t.states.iter()));
    model.layout.action_norm = Normalizer::fit(arch.action_dim, da.iter().filter_map(|t| t.actions.as_ref()).flatten());

    let xs: Vec<Vec<f64>> = dx
        .iter()
        .flat_map(|t| extract_windows(&t.stripped(), &arch.window, false))
        .map(|w| model.encode_window(&w.states.states))
        .collect();
    if xs.is_empty() {
        return Err(KoapError::Window(
            "observation trajectories are too short for the window".into(),
        ));
    }
    let frozen = model.clone();
    let bsz = cfg.koap.train.batch_size.max(1);
    let m = arch.latent_dim;
    let stage1 = model.params.mask_prefixes(&[VaeControllerModel::STAGE1_PREFIX]);
    let mut params = model.params.clone();
    let log = fit(&mut params, &cfg.koap.train, Some(&stage1), "vae", |rng, p| {
        let idx: Vec<usize> = (0..bsz).map(|_| rng.random_range(0..xs.len())).collect();
        let eps = Mat::from_vec(bsz, m, (0..bsz * m).map(|_| StandardNormal.sample(rng)).collect());
        let mut tape = Tape::new(p.len());
        let l = frozen.vae_loss_tape(&mut tape, p, &stack_rows(&xs, &idx), &eps)?;
        Ok((tape.scalar(l.total), tape.backward(l.total)))
    })?;
    model.params = params;

    let windows = labeled_set(da, arch)?;
    if windows.is_empty() {
        return Ok((model, log));
    }
    let hx: Vec<Vec<f64>> = windows.iter().map(|w| model.encode_window(&w.states.states)).collect();
    let hy: Vec<Vec<f64>> = windows
        .iter()
        .map(|w| flat_actions(&model.layout.action_norm, w.actions.as_deref().unwrap_or(&[])))
        .collect();
    let frozen = model.clone();
    let head = model.params.mask_prefixes(&[VaeControllerModel::HEAD_PREFIX]);
    let mut head_cfg = cfg.koap.train;
    head_cfg.steps = cfg.stage2_steps;
    let mut params = model.params.clone();
    fit(&mut params, &head_cfg, Some(&head), "vae-head", |rng, p| {
        let idx: Vec<usize> = (0..bsz).map(|_| rng.random_range(0..hx.len())).collect();
        let mut tape = Tape::new(p.len());
        let l = frozen.head_loss_tape(&mut tape, p, &stack_rows(&hx, &idx), &stack_rows(&hy, &idx))?;
        Ok((tape.scalar(l), tape.backward(l)))
    })?;
    model.params = params;
    Ok((model, log))
}
