//! Diffusion policy: the planner's diffusion machinery generating actions
//! instead of states.

use crate::data::{Trajectory, WindowSpec};
use crate::error::{KoapError, Result};
use crate::numerics::TrainLog;
use crate::planner::{train_action_diffusion, DiffusionConfig, DiffusionModel, TargetKind};

/// Action-generating diffusion model. Sampling seeds are derived from the
/// conditioning states, so inference is a pure function of its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPolicy {
    pub model: DiffusionModel,
}

impl DiffusionPolicy {
    pub fn new(model: DiffusionModel) -> Result<Self> {
        if model.arch().target != TargetKind::Actions {
            return Err(KoapError::Config("diffusion policy must generate actions".into()));
        }
        Ok(Self { model })
    }

    pub fn window(&self) -> WindowSpec {
        self.model.arch().window()
    }

    /// `k` actions given `history` and the current state. Only the first row
    /// of `plan` (the current state) is read.
    pub fn infer_actions(&self, history: &[Vec<f64>], plan: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let current = plan
            .first()
            .ok_or_else(|| KoapError::Window("diffusion policy needs the current state".into()))?;
        let seed = conditioning_seed(history, current);
        self.model.sample_target(history, current, seed)
    }
}

/// Order-sensitive 64-bit mix of the bit patterns of the conditioning states.
pub fn conditioning_seed(history: &[Vec<f64>], current: &[f64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for v in history.iter().flatten().chain(current) {
        h ^= v.to_bits();
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

pub fn train_diffusion_policy(da: &[Trajectory], cfg: &DiffusionConfig) -> Result<(DiffusionPolicy, TrainLog)> {
    let (model, log) = train_action_diffusion(da, cfg)?;
    Ok((DiffusionPolicy::new(model)?, log))
}
