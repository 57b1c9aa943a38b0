//! Ablations of the Koopman controller: nonlinear latent dynamics and action
//! decoder, and two-stage pretraining.

use super::ControllerConfig;
use crate::data::{Normalizer, Trajectory};
use crate::error::{KoapError, Result};
use crate::koopman::{labeled_windows, train_koap, train_on_windows, DynamicsKind, HeadKind, KoapConfig, KoapModel};
use crate::numerics::TrainLog;

/// Same objective as the Koopman controller with an MLP in place of `K` and
/// an MLP action decoder.
pub fn train_nonlinear_variant(
    dx: &[Trajectory],
    da: &[Trajectory],
    cfg: &ControllerConfig,
) -> Result<(KoapModel, TrainLog)> {
    train_koap(dx, da, &nonlinear_config(cfg))
}

pub fn nonlinear_config(cfg: &ControllerConfig) -> KoapConfig {
    let mut k = cfg.koap.clone();
    k.arch.dynamics = DynamicsKind::Mlp {
        hidden: cfg.nonlinear_hidden.clone(),
    };
    k.arch.head = HeadKind::Mlp {
        hidden: cfg.nonlinear_hidden.clone(),
    };
    k
}

/// Stage one trains on observations only; stage two fits the action decoder
/// and finetunes everything on the labeled set alone.
pub fn pretrain_finetune(
    dx: &[Trajectory],
    da: &[Trajectory],
    cfg: &ControllerConfig,
) -> Result<(KoapModel, TrainLog)> {
    let (model, log) = train_koap(dx, &[], &cfg.koap)?;
    finetune(model, log, da, cfg)
}

/// The second stage of [`pretrain_finetune`]; a no-op on an empty set.
pub fn finetune(
    mut model: KoapModel,
    log: TrainLog,
    da: &[Trajectory],
    cfg: &ControllerConfig,
) -> Result<(KoapModel, TrainLog)> {
    if da.is_empty() {
        return Ok((model, log));
    }
    let la = labeled_windows(da, model.arch())?;
    if la.is_empty() {
        return Err(KoapError::Window(
            "labeled trajectories are too short for the window".into(),
        ));
    }
    model.layout.action_norm = Normalizer::fit(
        model.arch().action_dim,
        da.iter().filter_map(|t| t.actions.as_ref()).flatten(),
    );
    let mut stage2 = cfg.koap.clone();
    stage2.train.steps = cfg.stage2_steps;
    let tail = train_on_windows(&mut model, &[], &la, &stage2, None, "finetune")?;
    let mut log = log;
    log.epoch_losses.extend(tail.epoch_losses);
    Ok((model, log))
}
