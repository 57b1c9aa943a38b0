use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{total_loss_tape, LossWeights};
use super::model::{KoapArch, KoapModel};
use crate::data::{extract_windows, Normalizer, Trajectory, Window};
use crate::error::{KoapError, Result};
use crate::numerics::{fit, Tape, TrainConfig, TrainLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoapConfig {
    pub arch: KoapArch,
    pub weights: LossWeights,
    pub train: TrainConfig,
    /// Labeled windows mixed into every minibatch when labels exist.
    pub labeled_batch_size: usize,
}

impl KoapConfig {
    pub fn for_dims(state_dim: usize, action_dim: usize) -> Self {
        Self {
            arch: KoapArch::for_dims(state_dim, action_dim),
            weights: LossWeights::default(),
            train: TrainConfig::default(),
            labeled_batch_size: 32,
        }
    }
}

fn check_dims(trajs: &[Trajectory], state_dim: usize) -> Result<()> {
    for t in trajs {
        t.validate()?;
        if t.state_dim() != state_dim {
            return Err(KoapError::dim("trajectory state", state_dim, t.state_dim()));
        }
    }
    Ok(())
}

pub(crate) fn unlabeled_windows(dx: &[Trajectory], arch: &KoapArch) -> Vec<Window> {
    dx.iter()
        .flat_map(|t| extract_windows(t, &arch.window, false))
        .collect()
}

pub(crate) fn labeled_windows(da: &[Trajectory], arch: &KoapArch) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for t in da {
        match t.action_dim() {
            Some(ad) if ad == arch.action_dim => {}
            Some(ad) => return Err(KoapError::dim("action label", arch.action_dim, ad)),
            None => {
                return Err(KoapError::LabeledData(
                    "labeled set contains a trajectory without actions".into(),
                ))
            }
        }
        out.extend(extract_windows(t, &arch.window, true));
    }
    Ok(out)
}

/// Fresh model with normalisation fitted to the observation set (states) and
/// the labeled set (actions).
pub(crate) fn init_model(dx: &[Trajectory], da: &[Trajectory], cfg: &KoapConfig) -> Result<KoapModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut model = KoapModel::new(cfg.arch.clone(), &mut rng)?;
    model.layout.state_norm = Normalizer::fit(cfg.arch.state_dim, dx.iter().flat_map(|t| t.states.iter()));
    model.layout.action_norm = Normalizer::fit(
        cfg.arch.action_dim,
        da.iter().filter_map(|t| t.actions.as_ref()).flatten(),
    );
    Ok(model)
}

/// Minibatch training of `model` on unlabeled windows `ux` mixed with labeled
/// windows `la`. Frozen entries of `mask` are left untouched.
pub(crate) fn train_on_windows(
    model: &mut KoapModel,
    ux: &[Window],
    la: &[Window],
    cfg: &KoapConfig,
    mask: Option<&[bool]>,
    tag: &str,
) -> Result<TrainLog> {
    if ux.is_empty() && la.is_empty() {
        return Err(KoapError::Config("no training windows".into()));
    }
    let frozen = model.clone();
    let mut order: Vec<usize> = (0..ux.len()).collect();
    let mut cursor = order.len();
    let bsz = cfg.train.batch_size.max(1);
    let lbsz = cfg.labeled_batch_size.max(1).min(la.len().max(1));
    let mut params = model.params.clone();
    let log = fit(&mut params, &cfg.train, mask, tag, |rng, p| {
        let mut batch: Vec<&Window> = Vec::with_capacity(bsz + lbsz);
        if !ux.is_empty() {
            for _ in 0..bsz {
                if cursor >= order.len() {
                    order.shuffle(rng);
                    cursor = 0;
                }
                batch.push(&ux[order[cursor]]);
                cursor += 1;
            }
        }
        if !la.is_empty() {
            for _ in 0..lbsz {
                batch.push(&la[rng.random_range(0..la.len())]);
            }
        }
        let prepared = frozen.prepare(&batch)?;
        let mut tape = Tape::new(p.len());
        let loss = total_loss_tape(&frozen, &mut tape, p, &prepared, &cfg.weights)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(KoapError::Numerical {
                segment: p.first_non_finite().unwrap_or("<loss>").to_string(),
                detail: format!("total loss evaluated to {value}"),
            });
        }
        Ok((value, tape.backward(loss)))
    })?;
    model.params = params;
    Ok(log)
}

/// Jointly train lifting, latent dynamics and latent-action predictor on the
/// observation set, and the action decoder on the labeled set when present.
pub fn train_koap(dx: &[Trajectory], da: &[Trajectory], cfg: &KoapConfig) -> Result<(KoapModel, TrainLog)> {
    if dx.is_empty() {
        return Err(KoapError::Config("observation set is empty".into()));
    }
    check_dims(dx, cfg.arch.state_dim)?;
    check_dims(da, cfg.arch.state_dim)?;
    let mut model = init_model(dx, da, cfg)?;
    // Observation trajectories are read without their action fields.
    let ux = unlabeled_windows(dx, &cfg.arch);
    let la = labeled_windows(da, &cfg.arch)?;
    if ux.is_empty() {
        return Err(KoapError::Window(
            "observation trajectories are too short for the configured window".into(),
        ));
    }
    let mask = if la.is_empty() {
        let head = model.params.mask_prefixes(&[KoapModel::HEAD_PREFIX]);
        Some(head.into_iter().map(|h| !h).collect::<Vec<bool>>())
    } else {
        None
    };
    let log = train_on_windows(&mut model, &ux, &la, cfg, mask.as_deref(), "koap")?;
    Ok((model, log))
}
