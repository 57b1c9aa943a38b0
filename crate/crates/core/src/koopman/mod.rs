//! Koopman latent-action controller.
//!
//! States are lifted with an encoder `g`, advanced linearly by a Koopman
//! matrix `K` plus an additive latent action `u = f(window)`, and latent
//! actions are decoded to real actions by an affine map. Training combines
//! reconstruction, latent dynamics and (when labels exist) action prediction.

mod loss;
mod model;
mod train;

use std::path::Path;

pub use loss::{loss_action, loss_kpm, loss_parts, loss_recon, total_loss, LossParts, LossWeights};
pub use model::{DynamicsKind, HeadKind, KoapArch, KoapLayout, KoapModel, PreparedBatch};
pub use train::{train_koap, KoapConfig};

pub(crate) use loss::{loss_terms, total_loss_tape, LossVars};
pub(crate) use train::{labeled_windows, train_on_windows};

#[cfg(test)]
pub(crate) use train::{init_model, unlabeled_windows};

use crate::error::Result;
use crate::numerics::checkpoint;

pub const CHECKPOINT_KIND: &str = "koap";

impl KoapModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, CHECKPOINT_KIND, &self.params, &self.layout)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, layout) = checkpoint::load(path, CHECKPOINT_KIND)?;
        Ok(Self { params, layout })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        checkpoint::encode(CHECKPOINT_KIND, &self.params, &self.layout)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (params, layout) = checkpoint::decode(CHECKPOINT_KIND, bytes)?;
        Ok(Self { params, layout })
    }
}

#[cfg(test)]
mod tests;
