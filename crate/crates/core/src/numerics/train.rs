//! Shared minibatch training loop.

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{AdamConfig, OptimizerState};
use super::params::ParamVector;
use crate::error::{KoapError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Total optimizer steps.
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Steps per logged epoch.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 64,
            seed: 0,
            adam: AdamConfig::default(),
            log_every: 100,
        }
    }
}

/// Mean training loss of every logged epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

impl TrainLog {
    pub fn last(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Run `cfg.steps` optimizer steps. `step` draws a minibatch from the RNG and
/// returns the loss and its gradient at the given parameters. Entries where
/// `mask` is false stay frozen.
pub fn fit<F>(
    params: &mut ParamVector,
    cfg: &TrainConfig,
    mask: Option<&[bool]>,
    tag: &str,
    mut step: F,
) -> Result<TrainLog>
where
    F: FnMut(&mut ChaCha8Rng, &ParamVector) -> Result<(f64, Vec<f64>)>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_7a1e);
    let mut opt = OptimizerState::new(params.len(), cfg.adam);
    let mut log = TrainLog::default();
    let every = cfg.log_every.max(1);
    let mut acc = 0.0;
    let mut count = 0usize;
    for it in 0..cfg.steps {
        let (loss, grads) = step(&mut rng, params).map_err(|e| match e {
            KoapError::Numerical { segment, detail } => KoapError::Numerical {
                segment,
                detail: format!("{tag}: diverged at step {it}: {detail}"),
            },
            other => other,
        })?;
        opt.step_masked(params, &grads, mask)?;
        if let Some(seg) = params.first_non_finite() {
            return Err(KoapError::Numerical {
                segment: seg.to_string(),
                detail: format!("{tag}: parameters became non-finite at step {it}"),
            });
        }
        acc += loss;
        count += 1;
        if count == every || it + 1 == cfg.steps {
            let mean = acc / count as f64;
            debug!("{tag}: epoch {} loss {mean:.6}", log.epoch_losses.len());
            log.epoch_losses.push(mean);
            acc = 0.0;
            count = 0;
        }
    }
    Ok(log)
}
