//! Supervised inverse-dynamics controller and the relabeling variant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{flat_actions, flat_states, labeled_set, require_labels, stack_rows, ControllerConfig};
use crate::data::{extract_windows, EndHandling, Normalizer, StateWindow, Trajectory, Window, WindowSpec};
use crate::error::{KoapError, Result};
use crate::numerics::{fit, Activation, Mat, Mlp, MlpSpec, ParamVector, Tape, TrainLog, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdLayout {
    pub state_dim: usize,
    pub action_dim: usize,
    pub window: WindowSpec,
    net: Mlp,
    pub state_norm: Normalizer,
    pub action_norm: Normalizer,
}

/// MLP regressing the `k` actions of a window from its flattened states.
#[derive(Debug, Clone, PartialEq)]
pub struct DdModel {
    pub params: ParamVector,
    pub layout: DdLayout,
}

impl DdModel {
    pub fn new<R: Rng>(
        state_dim: usize,
        action_dim: usize,
        window: WindowSpec,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = ParamVector::new();
        let mut widths = vec![window.len() * state_dim];
        widths.extend(hidden);
        widths.push(window.horizon * action_dim);
        let net = Mlp::init(&mut params, "dd", MlpSpec::uniform(&widths, Activation::Relu), rng)?;
        Ok(Self {
            params,
            layout: DdLayout {
                state_dim,
                action_dim,
                window,
                net,
                state_norm: Normalizer::identity(state_dim),
                action_norm: Normalizer::identity(action_dim),
            },
        })
    }

    /// Mean over predicted actions of the squared error, normalised units.
    pub(crate) fn loss_tape(&self, tape: &mut Tape, params: &ParamVector, x: &Mat, y: &Mat) -> Result<Var> {
        let xv = tape.constant(x.clone());
        let pred = self.layout.net.forward(tape, params, xv)?;
        let yv = tape.constant(y.clone());
        let diff = tape.sub(pred, yv);
        let l = tape.mean_row_sq_norm(diff);
        Ok(tape.scale(l, 1.0 / self.layout.window.horizon as f64))
    }

    pub(crate) fn encode_window(&self, states: &[Vec<f64>]) -> Vec<f64> {
        flat_states(&self.layout.state_norm, states)
    }

    pub fn predict(&self, window: &StateWindow) -> Result<Vec<Vec<f64>>> {
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
        let out = l
            .net
            .eval(&self.params, &Mat::row_vector(&self.encode_window(&window.states)))?;
        Ok(out.data.chunks(l.action_dim).map(|a| l.action_norm.invert(a)).collect())
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

/// Fit a supervised window-to-actions regressor on labeled windows.
pub(crate) fn fit_dd(
    windows: &[Window],
    da: &[Trajectory],
    cfg: &ControllerConfig,
    tag: &str,
) -> Result<(DdModel, TrainLog)> {
    let arch = &cfg.koap.arch;
    if windows.is_empty() {
        return Err(KoapError::LabeledData("no labeled windows to fit".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.koap.train.seed);
    let mut model = DdModel::new(arch.state_dim, arch.action_dim, arch.window, &cfg.mlp_hidden, &mut rng)?;
    model.layout.state_norm = Normalizer::fit(arch.state_dim, da.iter().flat_map(|t| t.states.iter()));
    model.layout.action_norm = Normalizer::fit(arch.action_dim, da.iter().filter_map(|t| t.actions.as_ref()).flatten());
    let xs: Vec<Vec<f64>> = windows.iter().map(|w| model.encode_window(&w.states.states)).collect();
    let ys: Vec<Vec<f64>> = windows
        .iter()
        .map(|w| flat_actions(&model.layout.action_norm, w.actions.as_deref().unwrap_or(&[])))
        .collect();
    let frozen = model.clone();
    let bsz = cfg.koap.train.batch_size.max(1);
    let mut params = model.params.clone();
    let log = fit(&mut params, &cfg.koap.train, None, tag, |rng, p| {
        let idx: Vec<usize> = (0..bsz).map(|_| rng.random_range(0..xs.len())).collect();
        let mut tape = Tape::new(p.len());
        let loss = frozen.loss_tape(&mut tape, p, &stack_rows(&xs, &idx), &stack_rows(&ys, &idx))?;
        Ok((tape.scalar(loss), tape.backward(loss)))
    })?;
    model.params = params;
    Ok((model, log))
}

/// Supervised controller trained on the labeled set only.
pub fn train_dd_controller(da: &[Trajectory], cfg: &ControllerConfig) -> Result<(DdModel, TrainLog)> {
    require_labels(da)?;
    let windows = labeled_set(da, &cfg.koap.arch)?;
    fit_dd(&windows, da, cfg, "dd")
}

/// Label every transition of `dx` with a regressor fitted on `da`, then fit
/// the supervised controller on the union.
pub fn relabel_and_train(
    dx: &[Trajectory],
    da: &[Trajectory],
    cfg: &ControllerConfig,
) -> Result<(Vec<Trajectory>, DdModel, TrainLog)> {
    let (labeler, _) = train_dd_controller(da, cfg)?;
    let pad = WindowSpec {
        end: EndHandling::HoldLast,
        ..cfg.koap.arch.window
    };
    let mut relabeled = Vec::with_capacity(dx.len());
    for t in dx {
        let windows = extract_windows(&t.stripped(), &pad, false);
        let mut actions = Vec::with_capacity(t.len().saturating_sub(1));
        for w in windows.iter().take(t.len().saturating_sub(1)) {
            actions.push(labeler.predict(&w.states)?.swap_remove(0));
        }
        relabeled.push(Trajectory {
            states: t.states.clone(),
            actions: Some(actions),
            meta: t.meta.clone(),
        });
    }
    let mut union: Vec<Trajectory> = da.to_vec();
    union.extend(relabeled.iter().cloned());
    let windows = labeled_set(&union, &cfg.koap.arch)?;
    let (model, log) = fit_dd(&windows, &union, cfg, "relabel")?;
    Ok((relabeled, model, log))
}
