//! Planar obstacle avoidance: an end effector crosses a unit table from left
//! to right under velocity control while avoiding fixed discs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{TrajMeta, Trajectory};
use crate::error::{KoapError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Disc {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        dx * dx + dy * dy < self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvoidConfig {
    pub obstacles: Vec<Disc>,
    pub goal_x: f64,
    /// Maximum displacement per step.
    pub max_speed: f64,
    pub episode_cap: usize,
    pub start: [f64; 2],
    /// Half-width of the uniform vertical jitter on the start position.
    pub start_jitter: f64,
    /// Std of Gaussian noise on observed positions (0 = fully observed).
    pub obs_noise: f64,
}

impl Default for AvoidConfig {
    fn default() -> Self {
        Self {
            obstacles: vec![
                Disc {
                    center: [0.5, 0.42],
                    radius: 0.12,
                },
                Disc {
                    center: [0.5, 0.58],
                    radius: 0.12,
                },
            ],
            goal_x: 0.9,
            max_speed: 0.05,
            episode_cap: 100,
            start: [0.0, 0.5],
            start_jitter: 0.03,
            obs_noise: 0.0,
        }
    }
}

impl AvoidConfig {
    /// Noisy-observation variant.
    pub fn partially_observed() -> Self {
        Self {
            obs_noise: 0.01,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Success,
    Collision,
    Timeout,
}

impl Status {
    pub fn is_done(self) -> bool {
        self != Status::Running
    }
}

#[derive(Debug, Clone)]
pub struct AvoidEnv {
    pub config: AvoidConfig,
    pos: [f64; 2],
    steps: usize,
    status: Status,
    noise_rng: ChaCha8Rng,
}

impl AvoidEnv {
    /// Start an episode; `seed` fixes the start jitter and observation noise.
    pub fn reset(config: AvoidConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = if config.start_jitter > 0.0 {
            rng.random_range(-config.start_jitter..=config.start_jitter)
        } else {
            0.0
        };
        let pos = [config.start[0], config.start[1] + jitter];
        Self {
            config,
            pos,
            steps: 0,
            status: Status::Running,
            noise_rng: rng,
        }
    }

    /// Start from an explicit position.
    pub fn at(config: AvoidConfig, pos: [f64; 2]) -> Self {
        Self {
            config,
            pos,
            steps: 0,
            status: Status::Running,
            noise_rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Observed state: the position, plus noise in the partially observed
    /// variant.
    pub fn observe(&mut self) -> Vec<f64> {
        if self.config.obs_noise > 0.0 {
            let n = Normal::new(0.0, self.config.obs_noise).expect("positive std");
            vec![
                self.pos[0] + n.sample(&mut self.noise_rng),
                self.pos[1] + n.sample(&mut self.noise_rng),
            ]
        } else {
            self.pos.to_vec()
        }
    }

    pub fn clip_action(&self, action: &[f64]) -> [f64; 2] {
        let (ax, ay) = (action[0], action[1]);
        let norm = (ax * ax + ay * ay).sqrt();
        if norm > self.config.max_speed {
            let s = self.config.max_speed / norm;
            [ax * s, ay * s]
        } else {
            [ax, ay]
        }
    }

    /// Apply a velocity command. Returns the executed (clipped) action and the
    /// new status.
    pub fn step(&mut self, action: &[f64]) -> Result<([f64; 2], Status)> {
        if self.status.is_done() {
            return Err(KoapError::Protocol(format!(
                "episode already finished with status {:?}",
                self.status
            )));
        }
        if action.len() != 2 {
            return Err(KoapError::dim("avoid action", 2, action.len()));
        }
        let a = self.clip_action(action);
        if !(a[0].is_finite() && a[1].is_finite()) {
            return Err(KoapError::Numerical {
                segment: "action".into(),
                detail: "non-finite velocity command".into(),
            });
        }
        self.pos = [
            (self.pos[0] + a[0]).clamp(0.0, 1.0),
            (self.pos[1] + a[1]).clamp(0.0, 1.0),
        ];
        self.steps += 1;
        self.status = if self.config.obstacles.iter().any(|d| d.contains(self.pos)) {
            Status::Collision
        } else if self.pos[0] >= self.config.goal_x {
            Status::Success
        } else if self.steps >= self.config.episode_cap {
            Status::Timeout
        } else {
            Status::Running
        };
        Ok((a, self.status))
    }
}

/// Functional step: `(state, status)` after applying `action`.
pub fn avoid_step(env: &mut AvoidEnv, action: &[f64]) -> Result<(Vec<f64>, Status)> {
    let (_, status) = env.step(action)?;
    Ok((env.position().to_vec(), status))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Above,
    Below,
}

impl Mode {
    pub fn from_seed(seed: u64) -> Self {
        if seed.is_multiple_of(2) {
            Mode::Above
        } else {
            Mode::Below
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Above => "above",
            Mode::Below => "below",
        }
    }
}

/// Scripted waypoint follower passing the obstacles on one side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertPolicy {
    /// Waypoints of the `above` mode; `below` mirrors them about y = 0.5.
    pub waypoints: Vec<[f64; 2]>,
    pub gain: f64,
    /// Std of the per-episode Gaussian perturbation of every waypoint.
    pub waypoint_noise: f64,
    /// Distance at which the follower switches to the next waypoint.
    pub switch_radius: f64,
    pub max_retries: usize,
}

impl Default for ExpertPolicy {
    fn default() -> Self {
        Self {
            waypoints: vec![[0.3, 0.8], [0.7, 0.8], [0.97, 0.6]],
            gain: 0.5,
            waypoint_noise: 0.03,
            switch_radius: 0.05,
            max_retries: 20,
        }
    }
}

impl ExpertPolicy {
    pub fn noiseless() -> Self {
        Self {
            waypoint_noise: 0.0,
            ..Self::default()
        }
    }

    fn route(&self, mode: Mode, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
        let noise = Normal::new(0.0, self.waypoint_noise.max(1e-300)).expect("valid std");
        self.waypoints
            .iter()
            .map(|w| {
                let y = match mode {
                    Mode::Above => w[1],
                    Mode::Below => 1.0 - w[1],
                };
                if self.waypoint_noise > 0.0 {
                    [w[0] + noise.sample(rng), y + noise.sample(rng)]
                } else {
                    [w[0], y]
                }
            })
            .collect()
    }
}

/// Velocity toward the active waypoint, advancing along `route`.
fn expert_action(
    expert: &ExpertPolicy,
    route: &[[f64; 2]],
    next: &mut usize,
    pos: [f64; 2],
    max_speed: f64,
) -> [f64; 2] {
    while *next + 1 < route.len() {
        let w = route[*next];
        let d = ((w[0] - pos[0]).powi(2) + (w[1] - pos[1]).powi(2)).sqrt();
        if d < expert.switch_radius {
            *next += 1;
        } else {
            break;
        }
    }
    let w = route[*next];
    let mut v = [expert.gain * (w[0] - pos[0]), expert.gain * (w[1] - pos[1])];
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n > max_speed {
        v = [v[0] * max_speed / n, v[1] * max_speed / n];
    }
    // Keep a minimum forward speed so the follower never stalls on the last
    // waypoint.
    let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if speed < 0.5 * max_speed {
        let s = 0.5 * max_speed / speed.max(1e-12);
        v = [v[0] * s, v[1] * s];
    }
    v
}

/// One labeled demonstration. The mode follows seed parity; noisy routes
/// that collide are resampled up to `max_retries` times.
pub fn expert_rollout(config: &AvoidConfig, expert: &ExpertPolicy, seed: u64) -> Result<Trajectory> {
    let mode = Mode::from_seed(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    for attempt in 0..=expert.max_retries {
        let route = expert.route(mode, &mut rng);
        let mut env = AvoidEnv::reset(config.clone(), seed.wrapping_add(attempt as u64 * 7919));
        let mut states = vec![env.observe()];
        let mut actions = Vec::new();
        let mut next = 0;
        while !env.status().is_done() {
            let a = expert_action(expert, &route, &mut next, env.position(), config.max_speed);
            let (executed, _) = env.step(&a)?;
            actions.push(executed.to_vec());
            states.push(env.observe());
        }
        if env.status() == Status::Success {
            return Ok(Trajectory {
                states,
                actions: Some(actions),
                meta: TrajMeta {
                    env: "avoid".into(),
                    seed,
                    mode: Some(mode.as_str().into()),
                },
            });
        }
    }
    Err(KoapError::Orchestration(format!(
        "expert failed {} times for seed {seed}",
        expert.max_retries + 1
    )))
}

/// Which side of the obstacle band a path passes on: the sign of the
/// vertical offset at the obstacle column.
pub fn classify_mode(states: &[Vec<f64>], config: &AvoidConfig) -> Option<Mode> {
    let cx = config.obstacles.iter().map(|d| d.center[0]).sum::<f64>() / config.obstacles.len().max(1) as f64;
    let cy = config.obstacles.iter().map(|d| d.center[1]).sum::<f64>() / config.obstacles.len().max(1) as f64;
    let closest = states
        .iter()
        .min_by(|a, b| (a[0] - cx).abs().total_cmp(&(b[0] - cx).abs()))?;
    if (closest[0] - cx).abs() > 0.1 {
        return None;
    }
    Some(if closest[1] >= cy { Mode::Above } else { Mode::Below })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_statuses() {
        let cfg = AvoidConfig::default();
        let mut env = AvoidEnv::at(cfg.clone(), [0.1, 0.1]);
        assert_eq!(avoid_step(&mut env, &[0.02, 0.0]).unwrap().1, Status::Running);

        let mut env = AvoidEnv::at(cfg.clone(), [0.40, 0.5]);
        assert_eq!(avoid_step(&mut env, &[0.05, 0.0]).unwrap().1, Status::Collision);
        assert!(matches!(env.step(&[0.0, 0.0]), Err(KoapError::Protocol(_))));

        let mut env = AvoidEnv::at(cfg.clone(), [0.88, 0.1]);
        assert_eq!(avoid_step(&mut env, &[0.03, 0.0]).unwrap().1, Status::Success);
    }

    #[test]
    fn actions_are_clipped() {
        let mut env = AvoidEnv::at(AvoidConfig::default(), [0.1, 0.1]);
        let (a, _) = env.step(&[3.0, 4.0]).unwrap();
        assert!((a[0] - 0.03).abs() < 1e-12 && (a[1] - 0.04).abs() < 1e-12);
    }

    #[test]
    fn zero_velocity_times_out() {
        let mut env = AvoidEnv::reset(AvoidConfig::default(), 0);
        let mut status = Status::Running;
        while !status.is_done() {
            status = env.step(&[0.0, 0.0]).unwrap().1;
        }
        assert_eq!(status, Status::Timeout);
        assert_eq!(env.steps(), 100);
    }

    #[test]
    fn transitions_are_deterministic() {
        let cfg = AvoidConfig::default();
        let mut a = AvoidEnv::at(cfg.clone(), [0.2, 0.3]);
        let mut b = AvoidEnv::at(cfg, [0.2, 0.3]);
        for _ in 0..5 {
            assert_eq!(
                avoid_step(&mut a, &[0.01, 0.02]).unwrap(),
                avoid_step(&mut b, &[0.01, 0.02]).unwrap()
            );
        }
    }

    #[test]
    fn noiseless_expert_modes() {
        let cfg = AvoidConfig::default();
        let expert = ExpertPolicy::noiseless();
        let above = expert_rollout(&cfg, &expert, 0).unwrap();
        assert_eq!(above.meta.mode.as_deref(), Some("above"));
        let band_top = 0.58 + 0.12;
        for s in above.states.iter().filter(|s| (s[0] - 0.5).abs() < 0.12) {
            assert!(s[1] > band_top, "{s:?}");
        }
        let below = expert_rollout(&cfg, &expert, 1).unwrap();
        assert_eq!(classify_mode(&below.states, &cfg), Some(Mode::Below));
        assert_eq!(classify_mode(&above.states, &cfg), Some(Mode::Above));
        assert!(above.len() <= cfg.episode_cap + 1);
        assert!(above.stripped().actions.is_none());
    }

    #[test]
    fn expert_modes_are_balanced() {
        let cfg = AvoidConfig::default();
        let expert = ExpertPolicy::default();
        let mut above = 0;
        for seed in 0..100 {
            let t = expert_rollout(&cfg, &expert, seed).unwrap();
            if t.meta.mode.as_deref() == Some("above") {
                above += 1;
            }
        }
        assert!((30..=70).contains(&above));
    }
}
