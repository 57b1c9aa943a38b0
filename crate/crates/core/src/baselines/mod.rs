//! Comparison controllers and ablations, all behind one interface:
//! `infer_actions(history, plan) -> k actions`.
//!
//! | id          | method                                                        |
//! |-------------|---------------------------------------------------------------|
//! | `koap`      | Koopman latent-action controller                              |
//! | `dd`        | supervised inverse dynamics on labeled windows                |
//! | `vae`       | window VAE on observations + action head on labels            |
//! | `lapo`      | quantized latent-action model + action head on labels         |
//! | `dp`        | diffusion over actions (no planner)                           |
//! | `nonlinear` | Koopman controller with MLP dynamics and action decoder       |
//! | `pretrain`  | Koopman controller pretrained without labels, then finetuned  |
//! | `relabel`   | supervised labeler applied to observations, then `dd`         |

mod dd;
mod dp;
mod fsq;
mod lapo;
mod vae;
mod variants;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dd::{relabel_and_train, train_dd_controller, DdLayout, DdModel};
pub use dp::{conditioning_seed, train_diffusion_policy, DiffusionPolicy};
pub use fsq::{fsq_quantize, FsqSpec};
pub use lapo::{train_lapo, LapoLayout, LapoModel};
pub use vae::{kl_to_standard_normal, train_vae_controller, VaeControllerModel, VaeLayout, VaeLossVars};
pub use variants::{finetune, nonlinear_config, pretrain_finetune, train_nonlinear_variant};

use crate::data::{Normalizer, Trajectory, Window, WindowSpec};
use crate::error::{KoapError, Result};
use crate::koopman::{labeled_windows, train_koap, KoapArch, KoapConfig, KoapLayout, KoapModel};
use crate::numerics::{checkpoint, Mat, TrainLog};
use crate::planner::{DiffusionConfig, DiffusionLayout, DiffusionModel};

/// Registered method ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Koap,
    Dd,
    Vae,
    Lapo,
    Dp,
    Nonlinear,
    Pretrain,
    Relabel,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Koap,
        Method::Dd,
        Method::Vae,
        Method::Lapo,
        Method::Dp,
        Method::Nonlinear,
        Method::Pretrain,
        Method::Relabel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Koap => "koap",
            Method::Dd => "dd",
            Method::Vae => "vae",
            Method::Lapo => "lapo",
            Method::Dp => "dp",
            Method::Nonlinear => "nonlinear",
            Method::Pretrain => "pretrain",
            Method::Relabel => "relabel",
        }
    }

    /// Whether the method consumes plans from the state planner.
    pub fn uses_planner(self) -> bool {
        self != Method::Dp
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = KoapError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| KoapError::Config(format!("unknown method id {s:?}")))
    }
}

/// Hyperparameters for every controller. Koopman-family methods read
/// `koap`; the others take dims, window, latent size and training schedule
/// from it as well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub koap: KoapConfig,
    /// Hidden widths of the MLPs in `dd`, `vae`, `lapo` and `relabel`.
    pub mlp_hidden: Vec<usize>,
    /// Hidden widths of the dynamics and decoder MLPs of `nonlinear`.
    pub nonlinear_hidden: Vec<usize>,
    pub fsq: FsqSpec,
    pub vae_beta: f64,
    /// Steps of the second stage of two-stage methods.
    pub stage2_steps: usize,
    pub diffusion: DiffusionConfig,
}

impl ControllerConfig {
    pub fn for_dims(state_dim: usize, action_dim: usize) -> Self {
        Self {
            koap: KoapConfig::for_dims(state_dim, action_dim),
            mlp_hidden: vec![64, 64],
            nonlinear_hidden: vec![64],
            fsq: FsqSpec::default(),
            vae_beta: 1e-3,
            stage2_steps: 1000,
            diffusion: DiffusionConfig::policy(state_dim, action_dim),
        }
    }

    pub fn arch(&self) -> &KoapArch {
        &self.koap.arch
    }

    /// Apply one seed to every training schedule.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.koap.train.seed = seed;
        self.diffusion.train.seed = seed;
        self
    }
}

/// The controller interface shared by every method.
pub trait Controller {
    fn window(&self) -> WindowSpec;

    /// `plan` holds the current state followed by `k` planned states.
    fn infer_actions(&self, history: &[Vec<f64>], plan: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

impl Controller for KoapModel {
    fn window(&self) -> WindowSpec {
        self.arch().window
    }

    fn infer_actions(&self, history: &[Vec<f64>], plan: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        KoapModel::infer_actions(self, history, plan)
    }
}

macro_rules! controller_impl {
    ($ty:ty) => {
        impl Controller for $ty {
            fn window(&self) -> WindowSpec {
                self.layout.window
            }

            fn infer_actions(&self, history: &[Vec<f64>], plan: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
                <$ty>::infer_actions(self, history, plan)
            }
        }
    };
}

controller_impl!(DdModel);
controller_impl!(VaeControllerModel);
controller_impl!(LapoModel);

impl Controller for DiffusionPolicy {
    fn window(&self) -> WindowSpec {
        DiffusionPolicy::window(self)
    }

    fn infer_actions(&self, history: &[Vec<f64>], plan: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        DiffusionPolicy::infer_actions(self, history, plan)
    }
}

/// A trained controller of any registered method.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerModel {
    Koap(KoapModel),
    Dd(DdModel),
    Vae(VaeControllerModel),
    Lapo(LapoModel),
    Dp(DiffusionPolicy),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedController {
    pub method: Method,
    pub model: ControllerModel,
}

impl Controller for TrainedController {
    fn window(&self) -> WindowSpec {
        self.as_dyn().window()
    }

    fn infer_actions(&self, history: &[Vec<f64>], plan: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.as_dyn().infer_actions(history, plan)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", content = "layout", rename_all = "snake_case")]
enum LayoutHeader {
    Koap(KoapLayout),
    Dd(DdLayout),
    Vae(VaeLayout),
    Lapo(LapoLayout),
    Dp(DiffusionLayout),
}

#[derive(Serialize, Deserialize)]
struct ControllerHeader {
    method: Method,
    model: LayoutHeader,
}

pub const CONTROLLER_CHECKPOINT_KIND: &str = "controller";

impl TrainedController {
    pub fn as_dyn(&self) -> &dyn Controller {
        match &self.model {
            ControllerModel::Koap(m) => m,
            ControllerModel::Dd(m) => m,
            ControllerModel::Vae(m) => m,
            ControllerModel::Lapo(m) => m,
            ControllerModel::Dp(m) => m,
        }
    }

    fn parts(&self) -> (&crate::numerics::ParamVector, ControllerHeader) {
        let (params, model) = match &self.model {
            ControllerModel::Koap(m) => (&m.params, LayoutHeader::Koap(m.layout.clone())),
            ControllerModel::Dd(m) => (&m.params, LayoutHeader::Dd(m.layout.clone())),
            ControllerModel::Vae(m) => (&m.params, LayoutHeader::Vae(m.layout.clone())),
            ControllerModel::Lapo(m) => (&m.params, LayoutHeader::Lapo(m.layout.clone())),
            ControllerModel::Dp(m) => (&m.model.params, LayoutHeader::Dp(m.model.layout.clone())),
        };
        (
            params,
            ControllerHeader {
                method: self.method,
                model,
            },
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (params, header) = self.parts();
        checkpoint::encode(CONTROLLER_CHECKPOINT_KIND, params, &header)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (params, header): (_, ControllerHeader) = checkpoint::decode(CONTROLLER_CHECKPOINT_KIND, bytes)?;
        let model = match header.model {
            LayoutHeader::Koap(layout) => ControllerModel::Koap(KoapModel { params, layout }),
            LayoutHeader::Dd(layout) => ControllerModel::Dd(DdModel { params, layout }),
            LayoutHeader::Vae(layout) => ControllerModel::Vae(VaeControllerModel { params, layout }),
            LayoutHeader::Lapo(layout) => ControllerModel::Lapo(LapoModel { params, layout }),
            LayoutHeader::Dp(layout) => ControllerModel::Dp(DiffusionPolicy::new(DiffusionModel { params, layout })?),
        };
        Ok(Self {
            method: header.method,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (params, header) = self.parts();
        checkpoint::save(path, CONTROLLER_CHECKPOINT_KIND, params, &header)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Train `method` on observations `dx` and labeled trajectories `da`.
pub fn train_controller(
    method: Method,
    dx: &[Trajectory],
    da: &[Trajectory],
    cfg: &ControllerConfig,
) -> Result<(TrainedController, TrainLog)> {
    let (model, log) = match method {
        Method::Koap => {
            let (m, l) = train_koap(dx, da, &cfg.koap)?;
            (ControllerModel::Koap(m), l)
        }
        Method::Nonlinear => {
            let (m, l) = train_nonlinear_variant(dx, da, cfg)?;
            (ControllerModel::Koap(m), l)
        }
        Method::Pretrain => {
            let (m, l) = pretrain_finetune(dx, da, cfg)?;
            (ControllerModel::Koap(m), l)
        }
        Method::Dd => {
            let (m, l) = train_dd_controller(da, cfg)?;
            (ControllerModel::Dd(m), l)
        }
        Method::Relabel => {
            let (_, m, l) = relabel_and_train(dx, da, cfg)?;
            (ControllerModel::Dd(m), l)
        }
        Method::Vae => {
            let (m, l) = train_vae_controller(dx, da, cfg)?;
            (ControllerModel::Vae(m), l)
        }
        Method::Lapo => {
            let (m, l) = train_lapo(dx, da, cfg)?;
            (ControllerModel::Lapo(m), l)
        }
        Method::Dp => {
            let (m, l) = train_diffusion_policy(da, &cfg.diffusion)?;
            (ControllerModel::Dp(m), l)
        }
    };
    Ok((TrainedController { method, model }, log))
}

// ---- shared helpers ----

pub(crate) fn flat_states(norm: &Normalizer, states: &[Vec<f64>]) -> Vec<f64> {
    states.iter().flat_map(|s| norm.apply(s)).collect()
}

pub(crate) fn flat_actions(norm: &Normalizer, actions: &[Vec<f64>]) -> Vec<f64> {
    actions.iter().flat_map(|a| norm.apply(a)).collect()
}

pub(crate) fn stack_rows(rows: &[Vec<f64>], idx: &[usize]) -> Mat {
    let cols = rows.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        data.extend_from_slice(&rows[i]);
    }
    Mat::from_vec(idx.len(), cols, data)
}

/// Labeled windows of `da`; an empty labeled set is an error for methods that
/// require labels.
pub(crate) fn labeled_set(da: &[Trajectory], arch: &KoapArch) -> Result<Vec<Window>> {
    labeled_windows(da, arch)
}

pub(crate) fn require_labels(da: &[Trajectory]) -> Result<()> {
    if da.is_empty() {
        return Err(KoapError::LabeledData("method needs labeled trajectories".into()));
    }
    Ok(())
}
