use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::envs::{expert_rollout, lti_generate, AvoidConfig, ExpertPolicy, LtiSystem};
use crate::error::{KoapError, Result};

/// A task: the environment and how demonstrations are produced in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    /// Planar obstacle avoidance with the two-mode scripted expert.
    Avoid {
        #[serde(default)]
        config: AvoidConfig,
        #[serde(default)]
        expert: ExpertPolicy,
    },
    /// Linear system under random excitation; `t_len` states per trajectory.
    Lti { system: LtiSystem, t_len: usize },
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::Avoid {
            config: AvoidConfig::default(),
            expert: ExpertPolicy::default(),
        }
    }
}

impl EnvSpec {
    pub fn id(&self) -> &'static str {
        match self {
            EnvSpec::Avoid { .. } => "avoid",
            EnvSpec::Lti { .. } => "lti",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            EnvSpec::Avoid { .. } => 2,
            EnvSpec::Lti { system, .. } => system.state_dim(),
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            EnvSpec::Avoid { .. } => 2,
            EnvSpec::Lti { system, .. } => system.action_dim(),
        }
    }

    /// `n` labeled demonstrations; demonstration `i` uses seed `seed + i`.
    pub fn generate_pool(&self, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
        if n == 0 {
            return Err(KoapError::Config("pool size must be positive".into()));
        }
        match self {
            EnvSpec::Avoid { config, expert } => (0..n as u64)
                .map(|i| expert_rollout(config, expert, seed.wrapping_add(i)))
                .collect(),
            EnvSpec::Lti { system, t_len } => lti_generate(system, n, *t_len, seed),
        }
    }
}

/// Observation and labeled sets for one action-label level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    /// Action-free trajectories.
    pub dx: Vec<Trajectory>,
    /// Labeled trajectories.
    pub da: Vec<Trajectory>,
    /// Fraction of the pool carrying labels.
    pub level: f64,
    /// Fraction of the pool available as observations.
    pub obs_fraction: f64,
    pub seed: u64,
    pub env: String,
}

/// `ceil(f * n)`, computed so that exact products are not pushed up by
/// floating-point error.
pub fn level_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

fn check_fractions(fractions: &[f64], n: usize) -> Result<()> {
    let mut prev = 0.0;
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) || f < prev {
            return Err(KoapError::Config(format!(
                "fractions must be increasing in (0, 1], got {fractions:?}"
            )));
        }
        if level_count(f, n) == 0 {
            return Err(KoapError::Config(format!("fraction {f} of {n} trajectories is empty")));
        }
        prev = f;
    }
    Ok(())
}

/// Nested label levels over one seeded permutation of the pool: level `i`
/// labels the first `ceil(f_i * N)` permuted trajectories. Observations are
/// the stripped copies of the whole pool at every level.
pub fn build_levels(pool: &[Trajectory], fractions: &[f64], seed: u64) -> Result<Vec<DatasetBundle>> {
    build_levels_with_observations(pool, fractions, 1.0, seed)
}

/// As [`build_levels`], with observations restricted to the first
/// `ceil(obs_fraction * N)` permuted trajectories. The same permutation
/// orders labels and observations, so every labeled trajectory with index
/// below the observation cut is also observed.
pub fn build_levels_with_observations(
    pool: &[Trajectory],
    fractions: &[f64],
    obs_fraction: f64,
    seed: u64,
) -> Result<Vec<DatasetBundle>> {
    let n = pool.len();
    if n == 0 {
        return Err(KoapError::Config("empty demonstration pool".into()));
    }
    check_fractions(fractions, n)?;
    check_fractions(&[obs_fraction], n)?;
    let perm = permutation(n, seed);
    let n_obs = level_count(obs_fraction, n);
    let dx: Vec<Trajectory> = perm[..n_obs].iter().map(|&i| pool[i].stripped()).collect();
    let env = pool[0].meta.env.clone();
    fractions
        .iter()
        .map(|&f| {
            let da: Vec<Trajectory> = perm[..level_count(f, n)].iter().map(|&i| pool[i].clone()).collect();
            if da.iter().any(|t| t.actions.is_none()) {
                return Err(KoapError::LabeledData("pool contains unlabeled trajectories".into()));
            }
            Ok(DatasetBundle {
                dx: dx.clone(),
                da,
                level: f,
                obs_fraction,
                seed,
                env: env.clone(),
            })
        })
        .collect()
}
