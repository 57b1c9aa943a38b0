use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::schedule::{q_sample_with, NoiseSchedule};
use crate::data::{extract_windows, EndHandling, Normalizer, Trajectory, Window, WindowSpec};
use crate::error::{KoapError, Result};
use crate::numerics::{checkpoint, fit, Activation, Mat, Mlp, MlpSpec, ParamVector, Tape, TrainConfig, TrainLog, Var};

/// What the diffused block holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Future states, encoded as offsets from the current state.
    FutureStates,
    /// Future actions.
    Actions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionArch {
    pub state_dim: usize,
    pub target_dim: usize,
    pub target: TargetKind,
    pub history: usize,
    pub horizon: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub time_embed: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub end: EndHandling,
}

impl DiffusionArch {
    pub fn planner(state_dim: usize) -> Self {
        Self {
            state_dim,
            target_dim: state_dim,
            target: TargetKind::FutureStates,
            history: 2,
            horizon: 12,
            hidden: vec![128, 128],
            activation: Activation::Relu,
            time_embed: 16,
            diffusion_steps: 50,
            beta_start: 1e-4,
            // With only 50 steps the endpoint must be large enough that the final
            // marginal is close to a standard normal (alpha_bar ~ 6e-3).
            beta_end: 0.2,
            end: EndHandling::Discard,
        }
    }

    pub fn policy(state_dim: usize, action_dim: usize) -> Self {
        Self {
            target_dim: action_dim,
            target: TargetKind::Actions,
            ..Self::planner(state_dim)
        }
    }

    pub fn window(&self) -> WindowSpec {
        WindowSpec {
            history: self.history,
            horizon: self.horizon,
            end: self.end,
        }
    }

    fn cond_len(&self) -> usize {
        (self.history + 1) * self.state_dim
    }

    fn target_len(&self) -> usize {
        self.horizon * self.target_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub arch: DiffusionArch,
    pub train: TrainConfig,
}

impl DiffusionConfig {
    pub fn planner(state_dim: usize) -> Self {
        Self {
            arch: DiffusionArch::planner(state_dim),
            train: TrainConfig {
                steps: 20000,
                ..TrainConfig::default()
            },
        }
    }

    pub fn policy(state_dim: usize, action_dim: usize) -> Self {
        Self {
            arch: DiffusionArch::policy(state_dim, action_dim),
            ..Self::planner(state_dim)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionLayout {
    pub arch: DiffusionArch,
    pub schedule: NoiseSchedule,
    denoiser: Mlp,
    pub state_norm: Normalizer,
    pub target_norm: Normalizer,
}

/// Conditional denoising diffusion model over a `horizon x target_dim`
/// block, conditioned on `history + 1` states.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    pub params: ParamVector,
    pub layout: DiffusionLayout,
}

/// Current state followed by `k` planned future states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub states: Vec<Vec<f64>>,
}

impl Plan {
    pub fn current(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn future(&self) -> &[Vec<f64>] {
        &self.states[1..]
    }
}

/// One training example in raw units: `history + 1` conditioning states and
/// the target rows.
#[derive(Debug, Clone)]
pub(crate) struct Example {
    cond: Vec<f64>,
    target: Vec<f64>,
}

/// Sinusoidal embedding of a diffusion step.
pub fn step_embedding(step: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        out.push((step as f64 * freq).sin());
    }
    for i in 0..dim - half {
        let freq = (-(10000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        out.push((step as f64 * freq).cos());
    }
    out
}

impl DiffusionModel {
    pub fn new<R: Rng>(arch: DiffusionArch, rng: &mut R) -> Result<Self> {
        if arch.state_dim == 0 || arch.target_dim == 0 || arch.horizon == 0 {
            return Err(KoapError::Config("diffusion dims must be positive".into()));
        }
        let schedule = NoiseSchedule::linear(arch.diffusion_steps, arch.beta_start, arch.beta_end)?;
        let mut params = ParamVector::new();
        let mut widths = vec![arch.cond_len() + arch.target_len() + arch.time_embed];
        widths.extend(&arch.hidden);
        widths.push(arch.target_len());
        let denoiser = Mlp::init(&mut params, "eps", MlpSpec::uniform(&widths, arch.activation), rng)?;
        let layout = DiffusionLayout {
            schedule,
            denoiser,
            state_norm: Normalizer::identity(arch.state_dim),
            target_norm: Normalizer::identity(arch.target_dim),
            arch,
        };
        Ok(Self { params, layout })
    }

    pub fn arch(&self) -> &DiffusionArch {
        &self.layout.arch
    }

    fn check_conditioning(&self, history: &[Vec<f64>], current: &[f64]) -> Result<()> {
        let arch = &self.layout.arch;
        if history.len() != arch.history {
            return Err(KoapError::Window(format!(
                "expected {} history states, got {}",
                arch.history,
                history.len()
            )));
        }
        for s in history.iter().map(Vec::as_slice).chain(std::iter::once(current)) {
            if s.len() != arch.state_dim {
                return Err(KoapError::dim("conditioning state", arch.state_dim, s.len()));
            }
        }
        Ok(())
    }

    /// Normalised conditioning vector.
    fn encode_cond(&self, cond_states: &[f64]) -> Vec<f64> {
        cond_states
            .chunks(self.layout.arch.state_dim)
            .flat_map(|s| self.layout.state_norm.apply(s))
            .collect()
    }

    fn encode_target(&self, target: &[f64]) -> Vec<f64> {
        target
            .chunks(self.layout.arch.target_dim)
            .flat_map(|r| self.layout.target_norm.apply(r))
            .collect()
    }

    /// Denoiser input rows `[cond | noisy target | step embedding]`.
    fn denoiser_input(&self, cond: &[Vec<f64>], noisy: &Mat, steps: &[usize]) -> Mat {
        let arch = &self.layout.arch;
        let width = arch.cond_len() + arch.target_len() + arch.time_embed;
        let mut m = Mat::zeros(cond.len(), width);
        for (r, c) in cond.iter().enumerate() {
            let row = m.row_mut(r);
            row[..c.len()].copy_from_slice(c);
            row[c.len()..c.len() + noisy.cols].copy_from_slice(noisy.row(r));
            row[c.len() + noisy.cols..].copy_from_slice(&step_embedding(steps[r], arch.time_embed));
        }
        m
    }

    /// Noise-prediction loss on the tape for a normalised minibatch.
    pub(crate) fn noise_loss_tape(
        &self,
        tape: &mut Tape,
        params: &ParamVector,
        cond: &[Vec<f64>],
        noisy: &Mat,
        steps: &[usize],
        noise: &Mat,
    ) -> Result<Var> {
        let input = self.denoiser_input(cond, noisy, steps);
        let x = tape.constant(input);
        let pred = self.layout.denoiser.forward(tape, params, x)?;
        let target = tape.constant(noise.clone());
        let diff = tape.sub(pred, target);
        let sq = tape.square(diff);
        let s = tape.sum(sq);
        Ok(tape.scale(s, 1.0 / noise.len().max(1) as f64))
    }

    /// Draw the diffused block given conditioning, by ancestral sampling from
    /// pure noise. Returns `horizon` rows in raw target units.
    pub fn sample_target(&self, history: &[Vec<f64>], current: &[f64], seed: u64) -> Result<Vec<Vec<f64>>> {
        self.check_conditioning(history, current)?;
        let arch = &self.layout.arch;
        let sched = &self.layout.schedule;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw_cond: Vec<f64> = history.iter().flatten().chain(current).copied().collect();
        let cond = vec![self.encode_cond(&raw_cond)];
        let d = arch.target_len();
        let mut x = Mat::from_vec(1, d, (0..d).map(|_| StandardNormal.sample(&mut rng)).collect());
        for step in (1..=sched.len()).rev() {
            // The conditioning block is re-imposed verbatim at every step.
            let input = self.denoiser_input(&cond, &x, &[step]);
            let eps = self.layout.denoiser.eval(&self.params, &input)?;
            let (alpha, beta, ab) = (sched.alpha(step), sched.beta(step), sched.alpha_bar(step));
            let coef = beta / (1.0 - ab).sqrt();
            let sigma = if step > 1 {
                sched.posterior_variance(step).sqrt()
            } else {
                0.0
            };
            for (v, e) in x.data.iter_mut().zip(&eps.data) {
                let mean = (*v - coef * e) / alpha.sqrt();
                let z: f64 = if step > 1 { StandardNormal.sample(&mut rng) } else { 0.0 };
                *v = mean + sigma * z;
            }
        }
        let rows = x
            .data
            .chunks(arch.target_dim)
            .map(|r| {
                let raw = self.layout.target_norm.invert(r);
                match arch.target {
                    TargetKind::FutureStates => raw.iter().zip(current).map(|(dlt, c)| c + dlt).collect(),
                    TargetKind::Actions => raw,
                }
            })
            .collect();
        Ok(rows)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(path, CHECKPOINT_KIND, &self.params, &self.layout)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (params, layout) = checkpoint::load(path, CHECKPOINT_KIND)?;
        Ok(Self { params, layout })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        checkpoint::encode(CHECKPOINT_KIND, &self.params, &self.layout)
    }
}

pub const CHECKPOINT_KIND: &str = "diffusion";

/// Future states given `(h_t, x_t)`. The first plan row is `x_t` verbatim.
pub fn sample_plan(model: &DiffusionModel, current: &[f64], history: &[Vec<f64>], seed: u64) -> Result<Plan> {
    if model.arch().target != TargetKind::FutureStates {
        return Err(KoapError::Config("model does not generate states".into()));
    }
    let future = model.sample_target(history, current, seed)?;
    let mut states = Vec::with_capacity(future.len() + 1);
    states.push(current.to_vec());
    states.extend(future);
    Ok(Plan { states })
}

fn examples_from_windows(windows: &[Window], arch: &DiffusionArch) -> Result<Vec<Example>> {
    windows
        .iter()
        .map(|w| {
            let s = &w.states;
            let cond: Vec<f64> = s.states[..=s.history].iter().flatten().copied().collect();
            let target: Vec<f64> = match arch.target {
                TargetKind::FutureStates => s
                    .future()
                    .iter()
                    .flat_map(|f| f.iter().zip(s.current()).map(|(a, b)| a - b))
                    .collect(),
                TargetKind::Actions => w
                    .actions
                    .as_ref()
                    .ok_or_else(|| KoapError::LabeledData("action diffusion needs labeled windows".into()))?
                    .iter()
                    .flatten()
                    .copied()
                    .collect(),
            };
            Ok(Example { cond, target })
        })
        .collect()
}

pub(crate) fn train_diffusion(
    examples: &[Example],
    cfg: &DiffusionConfig,
    tag: &str,
) -> Result<(DiffusionModel, TrainLog)> {
    if examples.is_empty() {
        return Err(KoapError::Config("no diffusion training examples".into()));
    }
    let arch = &cfg.arch;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut model = DiffusionModel::new(arch.clone(), &mut rng)?;
    let cond_rows: Vec<Vec<f64>> = examples
        .iter()
        .flat_map(|e| e.cond.chunks(arch.state_dim).map(<[f64]>::to_vec))
        .collect();
    model.layout.state_norm = Normalizer::fit(arch.state_dim, &cond_rows);
    let target_rows: Vec<Vec<f64>> = examples
        .iter()
        .flat_map(|e| e.target.chunks(arch.target_dim).map(<[f64]>::to_vec))
        .collect();
    model.layout.target_norm = Normalizer::fit(arch.target_dim, &target_rows);

    let encoded: Vec<(Vec<f64>, Vec<f64>)> = examples
        .iter()
        .map(|e| (model.encode_cond(&e.cond), model.encode_target(&e.target)))
        .collect();
    let frozen = model.clone();
    let t_max = frozen.layout.schedule.len();
    let d = arch.target_len();
    let bsz = cfg.train.batch_size.max(1);
    let mut params = model.params.clone();
    let log = fit(&mut params, &cfg.train, None, tag, |rng, p| {
        let mut cond = Vec::with_capacity(bsz);
        let mut noisy = Mat::zeros(bsz, d);
        let mut noise = Mat::zeros(bsz, d);
        let mut steps = Vec::with_capacity(bsz);
        for r in 0..bsz {
            let (c, x0) = &encoded[rng.random_range(0..encoded.len())];
            let step = rng.random_range(1..=t_max);
            let eps: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let x0m = Mat::row_vector(x0);
            let epsm = Mat::row_vector(&eps);
            let xt = q_sample_with(frozen.layout.schedule.alpha_bar(step), &x0m, &epsm)?;
            noisy.row_mut(r).copy_from_slice(&xt.data);
            noise.row_mut(r).copy_from_slice(&eps);
            cond.push(c.clone());
            steps.push(step);
        }
        let mut tape = Tape::new(p.len());
        let loss = frozen.noise_loss_tape(&mut tape, p, &cond, &noisy, &steps, &noise)?;
        let v = tape.scalar(loss);
        if !v.is_finite() {
            return Err(KoapError::Numerical {
                segment: p.first_non_finite().unwrap_or("<loss>").to_string(),
                detail: format!("noise-prediction loss evaluated to {v}"),
            });
        }
        Ok((v, tape.backward(loss)))
    })?;
    model.params = params;
    Ok((model, log))
}

/// Train a future-state planner on action-free trajectories.
pub fn train_planner(dx: &[Trajectory], cfg: &DiffusionConfig) -> Result<(DiffusionModel, TrainLog)> {
    if dx.is_empty() {
        return Err(KoapError::Config("observation set is empty".into()));
    }
    if cfg.arch.target != TargetKind::FutureStates {
        return Err(KoapError::Config("planner config must target future states".into()));
    }
    let windows: Vec<Window> = dx
        .iter()
        .flat_map(|t| extract_windows(t, &cfg.arch.window(), false))
        .collect();
    let examples = examples_from_windows(&windows, &cfg.arch)?;
    train_diffusion(&examples, cfg, "planner")
}

/// Train the same diffusion machinery to generate `k` actions conditioned on
/// `(h_t, x_t)`, from labeled trajectories only.
pub fn train_action_diffusion(da: &[Trajectory], cfg: &DiffusionConfig) -> Result<(DiffusionModel, TrainLog)> {
    if da.is_empty() {
        return Err(KoapError::LabeledData(
            "diffusion policy needs labeled trajectories".into(),
        ));
    }
    if cfg.arch.target != TargetKind::Actions {
        return Err(KoapError::Config("policy config must target actions".into()));
    }
    let mut windows = Vec::new();
    for t in da {
        if t.actions.is_none() {
            return Err(KoapError::LabeledData(
                "labeled set contains a trajectory without actions".into(),
            ));
        }
        windows.extend(extract_windows(t, &cfg.arch.window(), true));
    }
    let examples = examples_from_windows(&windows, &cfg.arch)?;
    train_diffusion(&examples, cfg, "diffusion-policy")
}

#[cfg(test)]
pub(crate) fn example(cond: Vec<f64>, target: Vec<f64>) -> Example {
    Example { cond, target }
}
