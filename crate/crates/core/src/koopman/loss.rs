//! Reconstruction, latent-dynamics and action-prediction losses.
//!
//! All three are means over items of squared Euclidean norms, computed in
//! normalised units.

use serde::{Deserialize, Serialize};

use super::model::{KoapModel, PreparedBatch};
use crate::data::Window;
use crate::error::{KoapError, Result};
use crate::numerics::{Mat, ParamVector, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the latent dynamics term.
    pub lambda1: f64,
    /// Weight of the action prediction term.
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub recon: f64,
    pub kpm: f64,
    /// `None` when the batch carries no labels.
    pub action: Option<f64>,
}

impl LossParts {
    pub fn total(&self, w: &LossWeights) -> f64 {
        self.recon + w.lambda1 * self.kpm + self.action.map_or(0.0, |a| w.lambda2 * a)
    }
}

pub(crate) struct LossVars {
    pub recon: Var,
    pub kpm: Var,
    pub action: Option<Var>,
}

/// Build all loss terms for a prepared batch on the tape.
pub(crate) fn loss_terms(
    model: &KoapModel,
    tape: &mut Tape,
    params: &ParamVector,
    batch: &PreparedBatch,
) -> Result<LossVars> {
    let b = batch.batch();
    if b == 0 {
        return Err(KoapError::Config("loss on an empty batch".into()));
    }
    let k = model.arch().window.horizon;
    let fwd = model.forward_tape(tape, params, batch)?;

    let x_hat = model.decode_tape(tape, params, fwd.z)?;
    let diff = tape.sub(x_hat, fwd.x);
    let recon = tape.mean_row_sq_norm(diff);

    let z_prev = tape.slice_rows(fwd.z, 0, b * k);
    let z_next = tape.slice_rows(fwd.z, b, b * k);
    let u = tape.concat_rows(&fwd.u);
    let pred = model.step_tape(tape, params, z_prev, u)?;
    let res = tape.sub(pred, z_next);
    let kpm = tape.mean_row_sq_norm(res);

    let action = if batch.labeled > 0 {
        let l = batch.labeled;
        let ul: Vec<Var> = fwd.u.iter().map(|&v| tape.slice_rows(v, 0, l)).collect();
        let ul = tape.concat_rows(&ul);
        let a_hat = model.head_tape(tape, params, ul)?;
        let labels: Vec<Var> = batch.actions.iter().map(|m| tape.constant(m.clone())).collect();
        let labels = tape.concat_rows(&labels);
        let diff = tape.sub(a_hat, labels);
        Some(tape.mean_row_sq_norm(diff))
    } else {
        None
    };
    Ok(LossVars { recon, kpm, action })
}

/// `L_recon + lambda1 * L_kpm + lambda2 * L_a`, with the action term dropped
/// when no window is labeled.
pub(crate) fn total_loss_tape(
    model: &KoapModel,
    tape: &mut Tape,
    params: &ParamVector,
    batch: &PreparedBatch,
    weights: &LossWeights,
) -> Result<Var> {
    let terms = loss_terms(model, tape, params, batch)?;
    let kpm = tape.scale(terms.kpm, weights.lambda1);
    let mut total = tape.add(terms.recon, kpm);
    if let Some(a) = terms.action {
        let a = tape.scale(a, weights.lambda2);
        total = tape.add(total, a);
    }
    Ok(total)
}

/// Mean squared reconstruction error over raw states.
pub fn loss_recon(model: &KoapModel, states: &[Vec<f64>]) -> Result<f64> {
    if states.is_empty() {
        return Err(KoapError::Config("reconstruction loss on an empty batch".into()));
    }
    let norm = &model.layout.state_norm;
    let rows: Vec<Vec<f64>> = states.iter().map(|s| norm.apply(s)).collect();
    let x = Mat::from_rows(&rows);
    let mut tape = Tape::new(model.params.len());
    let xv = tape.constant(x);
    let z = model.encode_tape(&mut tape, &model.params, xv)?;
    let x_hat = model.decode_tape(&mut tape, &model.params, z)?;
    let diff = tape.sub(x_hat, xv);
    let l = tape.mean_row_sq_norm(diff);
    Ok(tape.scalar(l))
}

/// Each loss term evaluated on one batch.
pub fn loss_parts(model: &KoapModel, windows: &[&Window]) -> Result<LossParts> {
    let batch = model.prepare(windows)?;
    let mut tape = Tape::new(model.params.len());
    let t = loss_terms(model, &mut tape, &model.params, &batch)?;
    Ok(LossParts {
        recon: tape.scalar(t.recon),
        kpm: tape.scalar(t.kpm),
        action: t.action.map(|a| tape.scalar(a)),
    })
}

/// Mean squared latent-dynamics residual over every transition of every
/// window.
pub fn loss_kpm(model: &KoapModel, windows: &[&Window]) -> Result<f64> {
    Ok(loss_parts(model, windows)?.kpm)
}

/// Mean squared action error; every window must be labeled.
pub fn loss_action(model: &KoapModel, windows: &[&Window]) -> Result<f64> {
    if let Some(i) = windows.iter().position(|w| !w.is_labeled()) {
        return Err(KoapError::LabeledData(format!("window {i} carries no action labels")));
    }
    loss_parts(model, windows)?
        .action
        .ok_or_else(|| KoapError::LabeledData("no labeled windows".into()))
}

pub fn total_loss(model: &KoapModel, windows: &[&Window], weights: &LossWeights) -> Result<f64> {
    let batch = model.prepare(windows)?;
    let mut tape = Tape::new(model.params.len());
    let v = total_loss_tape(model, &mut tape, &model.params, &batch, weights)?;
    Ok(tape.scalar(v))
}
