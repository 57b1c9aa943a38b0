//! Latent action model with a quantized bottleneck: an inverse model infers
//! a discrete latent action per transition, a forward model must predict the
//! next lifted state from it, and an action head is fitted afterwards on the
//! labeled set.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{labeled_set, ControllerConfig, FsqSpec};
use crate::data::{extract_windows, Normalizer, StateWindow, Trajectory, Window, WindowSpec};
use crate::error::{KoapError, Result};
use crate::numerics::{
    fit, Activation, Mat, Mlp, MlpSpec, ParamVector, RecurrentCell, SeqEncoder, SeqEncoderSpec, Tape, TrainLog, Var,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapoLayout {
    pub state_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub window: WindowSpec,
    pub fsq: FsqSpec,
    encoder: Mlp,
    decoder: Mlp,
    inverse: SeqEncoder,
    forward: Mlp,
    head: Mlp,
    pub state_norm: Normalizer,
    pub action_norm: Normalizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LapoModel {
    pub params: ParamVector,
    pub layout: LapoLayout,
}

/// Normalised windows stacked time-major.
struct Steps(Vec<Mat>);

impl LapoModel {
    pub const STAGE1_PREFIX: &'static str = "lapo.";
    pub const HEAD_PREFIX: &'static str = "head.";

    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        state_dim: usize,
        action_dim: usize,
        latent_dim: usize,
        window: WindowSpec,
        hidden: &[usize],
        seq_hidden: usize,
        fsq: FsqSpec,
        rng: &mut R,
    ) -> Result<Self> {
        fsq.validate()?;
        let q = fsq.dim();
        let mut params = ParamVector::new();
        let spec = |a: usize, b: usize| {
            let mut w = vec![a];
            w.extend(hidden);
            w.push(b);
            MlpSpec::uniform(&w, Activation::Tanh)
        };
        let encoder = Mlp::init(&mut params, "lapo.enc", spec(state_dim, latent_dim), rng)?;
        let decoder = Mlp::init(&mut params, "lapo.dec", spec(latent_dim, state_dim), rng)?;
        let inverse = SeqEncoder::init(
            &mut params,
            "lapo.inv",
            SeqEncoderSpec {
                input_dim: state_dim,
                hidden_dim: seq_hidden,
                output_dim: q,
                cell: RecurrentCell::Gru,
            },
            rng,
        )?;
        let forward = Mlp::init(&mut params, "lapo.fwd", spec(latent_dim + q, latent_dim), rng)?;
        let head = Mlp::init(&mut params, "head", spec(q, action_dim), rng)?;
        Ok(Self {
            params,
            layout: LapoLayout {
                state_dim,
                action_dim,
                latent_dim,
                window,
                fsq,
                encoder,
                decoder,
                inverse,
                forward,
                head,
                state_norm: Normalizer::identity(state_dim),
                action_norm: Normalizer::identity(action_dim),
            },
        })
    }

    fn steps(&self, windows: &[&StateWindow]) -> Result<Steps> {
        let l = &self.layout;
        let mut steps = vec![Mat::zeros(windows.len(), l.state_dim); l.window.len()];
        for (r, w) in windows.iter().enumerate() {
            if w.states.len() != l.window.len() || w.history != l.window.history {
                return Err(KoapError::Window(format!(
                    "expected a window of {} states with history {}",
                    l.window.len(),
                    l.window.history
                )));
            }
            for (j, s) in w.states.iter().enumerate() {
                if s.len() != l.state_dim {
                    return Err(KoapError::dim("window state", l.state_dim, s.len()));
                }
                steps[j].row_mut(r).copy_from_slice(&l.state_norm.apply(s));
            }
        }
        Ok(Steps(steps))
    }

    /// Quantized latent actions for the `k` transitions of each window, one
    /// `B x q` matrix per step. `relaxed` skips the rounding (the surrogate
    /// whose gradient the straight-through estimator follows).
    fn latent_actions_tape(
        &self,
        tape: &mut Tape,
        params: &ParamVector,
        steps: &[Var],
        relaxed: bool,
    ) -> Result<Vec<Var>> {
        let w = &self.layout.window;
        let outs = self.layout.inverse.forward(tape, params, steps)?;
        Ok(outs[w.history..w.history + w.horizon]
            .iter()
            .map(|&o| {
                let bounded = tape.tanh(o);
                if relaxed {
                    bounded
                } else {
                    tape.quantize(bounded, &self.layout.fsq.levels)
                }
            })
            .collect())
    }

    /// Next-lifted-state prediction error, its decoded counterpart in state
    /// space, and reconstruction of every lifted state.
    fn stage1_loss_tape(&self, tape: &mut Tape, params: &ParamVector, batch: &Steps, relaxed: bool) -> Result<Var> {
        let w = self.layout.window;
        let b = batch.0[0].rows;
        let steps: Vec<Var> = batch.0.iter().map(|m| tape.constant(m.clone())).collect();
        let q = self.latent_actions_tape(tape, params, &steps, relaxed)?;
        let x = tape.concat_rows(&steps[w.history..]);
        let z = self.layout.encoder.forward(tape, params, x)?;
        let x_hat = self.layout.decoder.forward(tape, params, z)?;
        let d = tape.sub(x_hat, x);
        let recon = tape.mean_row_sq_norm(d);

        let k = w.horizon;
        let z_prev = tape.slice_rows(z, 0, b * k);
        let z_next = tape.slice_rows(z, b, b * k);
        let qs = tape.concat_rows(&q);
        let zq = tape.concat_cols(&[z_prev, qs]);
        let pred = self.layout.forward.forward(tape, params, zq)?;
        let d = tape.sub(pred, z_next);
        let latent = tape.mean_row_sq_norm(d);

        let x_next = tape.slice_rows(x, b, b * k);
        let decoded = self.layout.decoder.forward(tape, params, pred)?;
        let d = tape.sub(decoded, x_next);
        let state = tape.mean_row_sq_norm(d);

        let s = tape.add(recon, latent);
        Ok(tape.add(s, state))
    }

    fn head_loss_tape(&self, tape: &mut Tape, params: &ParamVector, batch: &Steps, actions: &[Mat]) -> Result<Var> {
        let steps: Vec<Var> = batch.0.iter().map(|m| tape.constant(m.clone())).collect();
        let q = self.latent_actions_tape(tape, params, &steps, false)?;
        let qs = tape.concat_rows(&q);
        let pred = self.layout.head.forward(tape, params, qs)?;
        let labels: Vec<Var> = actions.iter().map(|m| tape.constant(m.clone())).collect();
        let y = tape.concat_rows(&labels);
        let d = tape.sub(pred, y);
        Ok(tape.mean_row_sq_norm(d))
    }

    /// Stage-one loss on raw windows. Used by gradient checks with
    /// `relaxed = true`.
    pub fn stage1_loss(
        &self,
        tape: &mut Tape,
        params: &ParamVector,
        windows: &[&StateWindow],
        relaxed: bool,
    ) -> Result<Var> {
        let batch = self.steps(windows)?;
        self.stage1_loss_tape(tape, params, &batch, relaxed)
    }

    /// Quantized latent actions of a raw window.
    pub fn latent_actions(&self, window: &StateWindow) -> Result<Vec<Vec<f64>>> {
        let batch = self.steps(&[window])?;
        let mut tape = Tape::new(self.params.len());
        let steps: Vec<Var> = batch.0.iter().map(|m| tape.constant(m.clone())).collect();
        let q = self.latent_actions_tape(&mut tape, &self.params, &steps, false)?;
        Ok(q.iter().map(|v| tape.value(*v).data.clone()).collect())
    }

    pub fn predict(&self, window: &StateWindow) -> Result<Vec<Vec<f64>>> {
        let q = self.latent_actions(window)?;
        let out = self.layout.head.eval(&self.params, &Mat::from_rows(&q))?;
        Ok(out
            .to_rows()
            .iter()
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

fn batch_of<'a>(
    pool: &'a [Window],
    order: &mut [usize],
    cursor: &mut usize,
    bsz: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a Window> {
    (0..bsz)
        .map(|_| {
            if *cursor >= order.len() {
                order.shuffle(rng);
                *cursor = 0;
            }
            *cursor += 1;
            &pool[order[*cursor - 1]]
        })
        .collect()
}

/// Stage one trains encoder, decoder, inverse and forward models on
/// observation windows; stage two freezes them and fits the head on labeled
/// windows.
pub fn train_lapo(dx: &[Trajectory], da: &[Trajectory], cfg: &ControllerConfig) -> Result<(LapoModel, TrainLog)> {
    let arch = &cfg.koap.arch;
    if dx.is_empty() {
        return Err(KoapError::Config("observation set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.koap.train.seed);
    let mut model = LapoModel::new(
        arch.state_dim,
        arch.action_dim,
        arch.latent_dim,
        arch.window,
        &cfg.mlp_hidden,
        arch.seq_hidden,
        cfg.fsq.clone(),
        &mut rng,
    )?;
    model.layout.state_norm = Normalizer::fit(arch.state_dim, dx.iter().flat_map(|t| t.states.iter()));
    model.layout.action_norm = Normalizer::fit(arch.action_dim, da.iter().filter_map(|t| t.actions.as_ref()).flatten());
    let ux: Vec<Window> = dx
        .iter()
        .flat_map(|t| extract_windows(&t.stripped(), &arch.window, false))
        .collect();
    if ux.is_empty() {
        return Err(KoapError::Window(
            "observation trajectories are too short for the window".into(),
        ));
    }
    let bsz = cfg.koap.train.batch_size.max(1);
    let frozen = model.clone();
    let stage1 = model.params.mask_prefixes(&[LapoModel::STAGE1_PREFIX]);
    let mut order: Vec<usize> = (0..ux.len()).collect();
    let mut cursor = order.len();
    let mut params = model.params.clone();
    let log = fit(&mut params, &cfg.koap.train, Some(&stage1), "lapo", |rng, p| {
        let picked = batch_of(&ux, &mut order, &mut cursor, bsz, rng);
        let sw: Vec<&StateWindow> = picked.iter().map(|w| &w.states).collect();
        let mut tape = Tape::new(p.len());
        let loss = frozen.stage1_loss(&mut tape, p, &sw, false)?;
        Ok((tape.scalar(loss), tape.backward(loss)))
    })?;
    model.params = params;

    let la = labeled_set(da, arch)?;
    if la.is_empty() {
        return Ok((model, log));
    }
    let frozen = model.clone();
    let head = model.params.mask_prefixes(&[LapoModel::HEAD_PREFIX]);
    let mut head_cfg = cfg.koap.train;
    head_cfg.steps = cfg.stage2_steps;
    let mut params = model.params.clone();
    fit(&mut params, &head_cfg, Some(&head), "lapo-head", |rng, p| {
        let picked: Vec<&Window> = (0..bsz).map(|_| &la[rng.random_range(0..la.len())]).collect();
        let sw: Vec<&StateWindow> = picked.iter().map(|w| &w.states).collect();
        let batch = frozen.steps(&sw)?;
        let mut actions = vec![Mat::zeros(bsz, arch.action_dim); arch.window.horizon];
        for (r, w) in picked.iter().enumerate() {
            for (j, a) in w.actions.as_ref().expect("labeled window").iter().enumerate() {
                actions[j]
                    .row_mut(r)
                    .copy_from_slice(&frozen.layout.action_norm.apply(a));
            }
        }
        let mut tape = Tape::new(p.len());
        let loss = frozen.head_loss_tape(&mut tape, p, &batch, &actions)?;
        Ok((tape.scalar(loss), tape.backward(loss)))
    })?;
    model.params = params;
    Ok((model, log))
}
