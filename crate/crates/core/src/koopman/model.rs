use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Normalizer, StateWindow, Window, WindowSpec};
use crate::error::{KoapError, Result};
use crate::numerics::{
    Activation, Mat, Mlp, MlpSpec, ParamVector, RecurrentCell, Segment, SeqEncoder, SeqEncoderSpec, Tape, Var,
};

/// How lifted states advance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DynamicsKind {
    /// `z' = K z + u` with an unconstrained m x m matrix.
    Linear,
    /// `z' = T([z, u])` with an MLP.
    Mlp { hidden: Vec<usize> },
}

/// Map from latent action to real action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadKind {
    Affine,
    Mlp { hidden: Vec<usize> },
}

/// Architecture of a Koopman latent-action model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoapArch {
    pub state_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub window: WindowSpec,
    pub encoder_hidden: Vec<usize>,
    pub activation: Activation,
    pub seq_hidden: usize,
    pub cell: RecurrentCell,
    pub dynamics: DynamicsKind,
    pub head: HeadKind,
}

impl KoapArch {
    /// Defaults for a given system: latent size four times the state size.
    pub fn for_dims(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            latent_dim: 4 * state_dim,
            window: WindowSpec::default(),
            encoder_hidden: vec![64],
            activation: Activation::Tanh,
            seq_hidden: 32,
            cell: RecurrentCell::Gru,
            dynamics: DynamicsKind::Linear,
            head: HeadKind::Affine,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 || self.latent_dim == 0 {
            return Err(KoapError::Config(
                "state, action and latent dims must be positive".into(),
            ));
        }
        if self.window.horizon == 0 {
            return Err(KoapError::Config("window horizon must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DynamicsParams {
    Linear { k: Segment },
    Mlp { net: Mlp },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum HeadParams {
    Affine { w: Segment, c: Segment },
    Mlp { net: Mlp },
}

/// Everything but the flat parameters; this is the checkpoint header body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoapLayout {
    pub arch: KoapArch,
    encoder: Mlp,
    decoder: Mlp,
    dynamics: DynamicsParams,
    latent_actions: SeqEncoder,
    head: HeadParams,
    pub state_norm: Normalizer,
    pub action_norm: Normalizer,
}

/// Lifting encoder, decoder, latent dynamics, latent-action predictor and
/// action decoder, plus normalisation statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct KoapModel {
    pub params: ParamVector,
    pub layout: KoapLayout,
}

/// Normalised windows stacked time-major for batched evaluation. Labeled
/// windows occupy the first `labeled` rows of every step matrix.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub steps: Vec<Mat>,
    pub labeled: usize,
    /// One `labeled x action_dim` matrix per horizon step.
    pub actions: Vec<Mat>,
}

impl PreparedBatch {
    pub fn batch(&self) -> usize {
        self.steps.first().map_or(0, |m| m.rows)
    }
}

pub(crate) struct Forward {
    /// Lifted current and future states, `(k + 1) * B` rows, time-major.
    pub z: Var,
    /// States matching `z`, normalised.
    pub x: Var,
    /// One `B x m` latent action per horizon step.
    pub u: Vec<Var>,
}

impl KoapModel {
    pub fn new<R: Rng>(arch: KoapArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let d = arch.state_dim;
        let m = arch.latent_dim;
        let mut params = ParamVector::new();

        let mut widths = vec![d];
        widths.extend(&arch.encoder_hidden);
        widths.push(m);
        let encoder = Mlp::init(&mut params, "enc", MlpSpec::uniform(&widths, arch.activation), rng)?;
        let mut widths = vec![m];
        widths.extend(arch.encoder_hidden.iter().rev());
        widths.push(d);
        let decoder = Mlp::init(&mut params, "dec", MlpSpec::uniform(&widths, arch.activation), rng)?;

        let dynamics = match &arch.dynamics {
            DynamicsKind::Linear => {
                let k = params.push_zeros("kpm.k", &[m, m]);
                let vals = params.get_mut(&k);
                for i in 0..m {
                    vals[i * m + i] = 1.0;
                }
                DynamicsParams::Linear { k }
            }
            DynamicsKind::Mlp { hidden } => {
                let mut widths = vec![2 * m];
                widths.extend(hidden);
                widths.push(m);
                DynamicsParams::Mlp {
                    net: Mlp::init(&mut params, "kpm", MlpSpec::uniform(&widths, arch.activation), rng)?,
                }
            }
        };

        let latent_actions = SeqEncoder::init(
            &mut params,
            "f",
            SeqEncoderSpec {
                input_dim: d,
                hidden_dim: arch.seq_hidden,
                output_dim: m,
                cell: arch.cell,
            },
            rng,
        )?;

        let head = match &arch.head {
            HeadKind::Affine => HeadParams::Affine {
                w: params.push_glorot("head.w", m, arch.action_dim, rng),
                c: params.push_zeros("head.c", &[arch.action_dim]),
            },
            HeadKind::Mlp { hidden } => {
                let mut widths = vec![m];
                widths.extend(hidden);
                widths.push(arch.action_dim);
                HeadParams::Mlp {
                    net: Mlp::init(&mut params, "head", MlpSpec::uniform(&widths, arch.activation), rng)?,
                }
            }
        };

        let layout = KoapLayout {
            state_norm: Normalizer::identity(d),
            action_norm: Normalizer::identity(arch.action_dim),
            arch,
            encoder,
            decoder,
            dynamics,
            latent_actions,
            head,
        };
        Ok(Self { params, layout })
    }

    pub fn arch(&self) -> &KoapArch {
        &self.layout.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.layout.arch.latent_dim
    }

    /// Segment prefix of the action decoder.
    pub const HEAD_PREFIX: &'static str = "head.";

    // ---- tape-level building blocks (normalised units) ----

    pub(crate) fn encode_tape(&self, tape: &mut Tape, params: &ParamVector, x: Var) -> Result<Var> {
        self.layout.encoder.forward(tape, params, x)
    }

    pub(crate) fn decode_tape(&self, tape: &mut Tape, params: &ParamVector, z: Var) -> Result<Var> {
        self.layout.decoder.forward(tape, params, z)
    }

    pub(crate) fn step_tape(&self, tape: &mut Tape, params: &ParamVector, z: Var, u: Var) -> Result<Var> {
        match &self.layout.dynamics {
            DynamicsParams::Linear { k } => {
                let kv = tape.param(params, k);
                let kt = tape.transpose(kv);
                let kz = tape.matmul(z, kt);
                Ok(tape.add(kz, u))
            }
            DynamicsParams::Mlp { net } => {
                let zu = tape.concat_cols(&[z, u]);
                net.forward(tape, params, zu)
            }
        }
    }

    pub(crate) fn head_tape(&self, tape: &mut Tape, params: &ParamVector, u: Var) -> Result<Var> {
        match &self.layout.head {
            HeadParams::Affine { w, c } => {
                let wv = tape.param(params, w);
                let cv = tape.param(params, c);
                let a = tape.matmul(u, wv);
                Ok(tape.add_row(a, cv))
            }
            HeadParams::Mlp { net } => net.forward(tape, params, u),
        }
    }

    /// Latent actions for the `k` transitions starting at the current state.
    pub(crate) fn latent_actions_tape(&self, tape: &mut Tape, params: &ParamVector, steps: &[Var]) -> Result<Vec<Var>> {
        let w = &self.layout.arch.window;
        if steps.len() != w.len() {
            return Err(KoapError::Window(format!(
                "expected {} window states, got {}",
                w.len(),
                steps.len()
            )));
        }
        let outs = self.layout.latent_actions.forward(tape, params, steps)?;
        Ok(outs[w.history..w.history + w.horizon].to_vec())
    }

    pub(crate) fn forward_tape(&self, tape: &mut Tape, params: &ParamVector, batch: &PreparedBatch) -> Result<Forward> {
        let w = self.layout.arch.window;
        let steps: Vec<Var> = batch.steps.iter().map(|m| tape.constant(m.clone())).collect();
        let x = tape.concat_rows(&steps[w.history..]);
        let z = self.encode_tape(tape, params, x)?;
        let u = self.latent_actions_tape(tape, params, &steps)?;
        Ok(Forward { z, x, u })
    }

    // ---- data preparation ----

    /// Normalise and stack windows. Labeled windows are placed first.
    pub fn prepare(&self, windows: &[&Window]) -> Result<PreparedBatch> {
        let arch = &self.layout.arch;
        let wlen = arch.window.len();
        let mut ordered: Vec<&Window> = windows.iter().copied().filter(|w| w.is_labeled()).collect();
        let labeled = ordered.len();
        ordered.extend(windows.iter().copied().filter(|w| !w.is_labeled()));
        let b = ordered.len();
        let mut steps = vec![Mat::zeros(b, arch.state_dim); wlen];
        for (r, win) in ordered.iter().enumerate() {
            let sw = &win.states;
            if sw.states.len() != wlen || sw.history != arch.window.history {
                return Err(KoapError::Window(format!(
                    "window of {} states (history {}) does not match model window {} (history {})",
                    sw.states.len(),
                    sw.history,
                    wlen,
                    arch.window.history
                )));
            }
            for (j, s) in sw.states.iter().enumerate() {
                if s.len() != arch.state_dim {
                    return Err(KoapError::dim("window state", arch.state_dim, s.len()));
                }
                steps[j].row_mut(r).copy_from_slice(&self.layout.state_norm.apply(s));
            }
        }
        let mut actions = vec![Mat::zeros(labeled, arch.action_dim); arch.window.horizon];
        for (r, win) in ordered.iter().take(labeled).enumerate() {
            let acts = win.actions.as_ref().expect("labeled window");
            if acts.len() != arch.window.horizon {
                return Err(KoapError::LabeledData(format!(
                    "window carries {} action labels, expected {}",
                    acts.len(),
                    arch.window.horizon
                )));
            }
            for (j, a) in acts.iter().enumerate() {
                if a.len() != arch.action_dim {
                    return Err(KoapError::dim("action label", arch.action_dim, a.len()));
                }
                actions[j].row_mut(r).copy_from_slice(&self.layout.action_norm.apply(a));
            }
        }
        Ok(PreparedBatch {
            steps,
            labeled,
            actions,
        })
    }

    // ---- plain inference API (raw units in, raw units out) ----

    /// Lift a raw state.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.layout.arch.state_dim {
            return Err(KoapError::dim("encode", self.layout.arch.state_dim, x.len()));
        }
        let xn = self.layout.state_norm.apply(x);
        Ok(self.layout.encoder.eval(&self.params, &Mat::row_vector(&xn))?.data)
    }

    /// Map a lifted state back to a raw state.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() {
            return Err(KoapError::dim("decode", self.latent_dim(), z.len()));
        }
        let xn = self.layout.decoder.eval(&self.params, &Mat::row_vector(z))?.data;
        Ok(self.layout.state_norm.invert(&xn))
    }

    /// Advance a lifted state by one step under latent action `u`.
    pub fn koopman_step(&self, z: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let m = self.latent_dim();
        if z.len() != m || u.len() != m {
            return Err(KoapError::dim("koopman_step", m, z.len().max(u.len())));
        }
        let mut tape = Tape::new(self.params.len());
        let zv = tape.constant(Mat::row_vector(z));
        let uv = tape.constant(Mat::row_vector(u));
        let out = self.step_tape(&mut tape, &self.params, zv, uv)?;
        Ok(tape.value(out).data.clone())
    }

    /// The Koopman matrix, when the dynamics are linear.
    pub fn koopman_matrix(&self) -> Option<Mat> {
        match &self.layout.dynamics {
            DynamicsParams::Linear { k } => Some(Mat::from_vec(k.shape[0], k.shape[1], self.params.get(k).to_vec())),
            DynamicsParams::Mlp { .. } => None,
        }
    }

    pub fn set_koopman_matrix(&mut self, k: &Mat) -> Result<()> {
        match &self.layout.dynamics {
            DynamicsParams::Linear { k: seg } => {
                if seg.len() != k.len() {
                    return Err(KoapError::dim("koopman matrix", seg.len(), k.len()));
                }
                let seg = seg.clone();
                self.params.get_mut(&seg).copy_from_slice(&k.data);
                Ok(())
            }
            DynamicsParams::Mlp { .. } => Err(KoapError::Config("model has nonlinear dynamics".into())),
        }
    }

    /// Overwrite the affine action decoder: `a = u W + c` in normalised
    /// action units, with `W` stored `m x action_dim`.
    pub fn set_action_decoder(&mut self, w: &[f64], c: &[f64]) -> Result<()> {
        match &self.layout.head {
            HeadParams::Affine { w: ws, c: cs } => {
                if ws.len() != w.len() || cs.len() != c.len() {
                    return Err(KoapError::dim("action decoder", ws.len(), w.len()));
                }
                let (ws, cs) = (ws.clone(), cs.clone());
                self.params.get_mut(&ws).copy_from_slice(w);
                self.params.get_mut(&cs).copy_from_slice(c);
                Ok(())
            }
            HeadParams::Mlp { .. } => Err(KoapError::Config("model has a nonlinear action head".into())),
        }
    }

    /// Latent actions `u_t .. u_{t+k-1}` for a raw-state window.
    pub fn predict_latent_actions(&self, window: &StateWindow) -> Result<Vec<Vec<f64>>> {
        let win = Window {
            states: window.clone(),
            actions: None,
        };
        let batch = self.prepare(&[&win])?;
        let mut tape = Tape::new(self.params.len());
        let steps: Vec<Var> = batch.steps.iter().map(|m| tape.constant(m.clone())).collect();
        let u = self.latent_actions_tape(&mut tape, &self.params, &steps)?;
        Ok(u.iter().map(|v| tape.value(*v).data.clone()).collect())
    }

    /// Decode a latent action to a raw action.
    pub fn decode_action(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.latent_dim() {
            return Err(KoapError::dim("decode_action", self.latent_dim(), u.len()));
        }
        let mut tape = Tape::new(self.params.len());
        let uv = tape.constant(Mat::row_vector(u));
        let a = self.head_tape(&mut tape, &self.params, uv)?;
        Ok(self.layout.action_norm.invert(&tape.value(a).data))
    }

    /// Actions realising `plan` (current state followed by `k` future states)
    /// given `history`.
    pub fn infer_actions(&self, history: &[Vec<f64>], plan: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let w = &self.layout.arch.window;
        if history.len() != w.history || plan.len() != w.horizon + 1 {
            return Err(KoapError::Window(format!(
                "controller expects {} history states and a plan of {} states, got {} and {}",
                w.history,
                w.horizon + 1,
                history.len(),
                plan.len()
            )));
        }
        let window = StateWindow::assemble(history, &plan[0], &plan[1..])?;
        self.predict_latent_actions(&window)?
            .iter()
            .map(|u| self.decode_action(u))
            .collect()
    }
}
