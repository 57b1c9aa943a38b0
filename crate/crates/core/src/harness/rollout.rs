use serde::{Deserialize, Serialize};

use super::dataset::EnvSpec;
use crate::baselines::Controller;
use crate::envs::{lti_step, AvoidEnv, LtiSystem, Status};
use crate::error::{KoapError, Result};
use crate::planner::{sample_plan, DiffusionModel, Plan};

/// Receding-horizon protocol and evaluation budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    /// Actions predicted per plan.
    pub horizon: usize,
    /// Actions executed before replanning.
    pub replan_interval: usize,
    /// History states conditioning planner and controller.
    pub history: usize,
    pub episodes: usize,
    pub seeds: Vec<u64>,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            horizon: 12,
            replan_interval: 4,
            history: 2,
            episodes: 20,
            seeds: (0..6).collect(),
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replan_interval == 0 || self.replan_interval > self.horizon {
            return Err(KoapError::Config(format!(
                "replan interval {} must be in 1..={}",
                self.replan_interval, self.horizon
            )));
        }
        Ok(())
    }
}

/// Anything that proposes `k` future states from `(x_t, h_t)`.
pub trait Planner {
    fn plan(&self, current: &[f64], history: &[Vec<f64>], seed: u64) -> Result<Plan>;
}

impl Planner for DiffusionModel {
    fn plan(&self, current: &[f64], history: &[Vec<f64>], seed: u64) -> Result<Plan> {
        sample_plan(self, current, history, seed)
    }
}

/// A closed-loop policy: plan-then-control, or a controller acting directly
/// from `(x_t, h_t)`.
#[derive(Clone, Copy)]
pub enum Policy<'a> {
    PlanThenControl {
        planner: &'a dyn Planner,
        controller: &'a dyn Controller,
    },
    Direct(&'a dyn Controller),
}

/// Environments the rollout loop can drive.
pub trait RolloutEnv {
    fn observe(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, Status)>;
    fn status(&self) -> Status;
}

impl RolloutEnv for AvoidEnv {
    fn observe(&mut self) -> Vec<f64> {
        AvoidEnv::observe(self)
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, Status)> {
        let (a, s) = AvoidEnv::step(self, action)?;
        Ok((a.to_vec(), s))
    }

    fn status(&self) -> Status {
        AvoidEnv::status(self)
    }
}

/// Noiseless linear system run for a fixed number of steps; episodes end in
/// `Timeout` since the system has no goal.
#[derive(Debug, Clone)]
pub struct LtiEnv {
    pub system: LtiSystem,
    pub state: Vec<f64>,
    pub cap: usize,
    steps: usize,
}

impl LtiEnv {
    pub fn new(system: LtiSystem, state: Vec<f64>, cap: usize) -> Self {
        Self {
            system,
            state,
            cap,
            steps: 0,
        }
    }
}

impl RolloutEnv for LtiEnv {
    fn observe(&mut self) -> Vec<f64> {
        self.state.clone()
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, Status)> {
        if self.steps >= self.cap {
            return Err(KoapError::Protocol("episode already finished".into()));
        }
        self.state = lti_step(&self.system, &self.state, action)?;
        self.steps += 1;
        Ok((action.to_vec(), self.status()))
    }

    fn status(&self) -> Status {
        if self.steps >= self.cap {
            Status::Timeout
        } else {
            Status::Running
        }
    }
}

/// Everything that happened in one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub env: String,
    pub method: String,
    pub seed: u64,
    pub episode: usize,
    /// Observed states, starting with the initial observation.
    pub states: Vec<Vec<f64>>,
    /// Executed (post-clipping) actions.
    pub actions: Vec<Vec<f64>>,
    /// Plans requested during the episode, in order.
    pub plans: Vec<Vec<Vec<f64>>>,
    pub status: Status,
    pub steps: usize,
    /// Actions executed from each plan.
    pub executed_per_plan: Vec<usize>,
    /// History length passed with each plan request.
    pub history_lens: Vec<usize>,
    /// Number of actions returned by the controller for each plan.
    pub action_horizons: Vec<usize>,
}

impl RolloutRecord {
    pub fn planner_calls(&self) -> usize {
        self.executed_per_plan.len()
    }

    pub fn success(&self) -> bool {
        self.status == Status::Success
    }
}

/// The `n` states preceding index `t`, replicating the first state before the
/// episode start.
pub fn history_at(states: &[Vec<f64>], t: usize, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|j| {
            let idx = t as isize - n as isize + j as isize;
            states[idx.max(0) as usize].clone()
        })
        .collect()
}

/// Seed of the `call`-th planner query of an episode.
pub fn plan_seed(episode_seed: u64, call: usize) -> u64 {
    episode_seed
        .wrapping_mul(0x2545_f491_4f6c_dd1d)
        .wrapping_add(call as u64)
}

/// Receding-horizon loop: plan from `(x_t, h_t)`, infer `k` actions, execute
/// the first `replan_interval` of them (fewer if the episode ends), repeat.
pub fn rollout<E: RolloutEnv>(
    policy: Policy<'_>,
    env: &mut E,
    cfg: &RolloutConfig,
    episode_seed: u64,
) -> Result<RolloutRecord> {
    cfg.validate()?;
    let mut states = vec![env.observe()];
    let mut record = RolloutRecord {
        env: String::new(),
        method: String::new(),
        seed: episode_seed,
        episode: 0,
        states: Vec::new(),
        actions: Vec::new(),
        plans: Vec::new(),
        status: env.status(),
        steps: 0,
        executed_per_plan: Vec::new(),
        history_lens: Vec::new(),
        action_horizons: Vec::new(),
    };
    while !env.status().is_done() {
        let t = states.len() - 1;
        let current = states[t].clone();
        let history = history_at(&states, t, cfg.history);
        let (plan, controller) = match policy {
            Policy::PlanThenControl { planner, controller } => {
                let plan = planner.plan(&current, &history, plan_seed(episode_seed, record.plans.len()))?;
                if plan.states.len() != cfg.horizon + 1 {
                    return Err(KoapError::dim("plan length", cfg.horizon + 1, plan.states.len()));
                }
                (plan.states, controller)
            }
            Policy::Direct(controller) => (vec![current.clone()], controller),
        };
        let actions = controller.infer_actions(&history, &plan)?;
        if actions.len() != cfg.horizon {
            return Err(KoapError::dim("controller output", cfg.horizon, actions.len()));
        }
        record.history_lens.push(history.len());
        record.action_horizons.push(actions.len());
        record.plans.push(plan);
        let mut executed = 0;
        for a in actions.iter().take(cfg.replan_interval) {
            let (done_action, status) = env.step(a)?;
            record.actions.push(done_action);
            states.push(env.observe());
            executed += 1;
            if status.is_done() {
                break;
            }
        }
        record.executed_per_plan.push(executed);
    }
    record.steps = record.actions.len();
    record.status = env.status();
    record.states = states;
    Ok(record)
}

/// Seed of episode `e` under evaluation seed `s`; disjoint from the
/// demonstration seeds of any realistic pool.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    1_000_000_007u64
        .wrapping_mul(seed.wrapping_add(1))
        .wrapping_add(episode as u64)
}

/// Run `cfg.episodes` episodes of `policy` in `env` under evaluation seed
/// `seed`.
pub fn run_episodes(
    policy: Policy<'_>,
    env: &EnvSpec,
    cfg: &RolloutConfig,
    seed: u64,
    method: &str,
) -> Result<Vec<RolloutRecord>> {
    (0..cfg.episodes)
        .map(|e| {
            let es = episode_seed(seed, e);
            let mut rec = match env {
                EnvSpec::Avoid { config, .. } => {
                    let mut world = AvoidEnv::reset(config.clone(), es);
                    rollout(policy, &mut world, cfg, es)?
                }
                EnvSpec::Lti { system, t_len } => {
                    use rand::SeedableRng;
                    use rand_distr::{Distribution, StandardNormal};
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(es);
                    let x0 = (0..system.state_dim())
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect();
                    let mut world = LtiEnv::new(system.clone(), x0, t_len.saturating_sub(1).max(1));
                    rollout(policy, &mut world, cfg, es)?
                }
            };
            rec.env = env.id().into();
            rec.method = method.into();
            rec.seed = seed;
            rec.episode = e;
            Ok(rec)
        })
        .collect()
}

/// Fraction of successful episodes.
pub fn success_rate(records: &[RolloutRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.success()).count() as f64 / records.len() as f64
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
