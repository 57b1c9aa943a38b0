#![allow(dead_code)]

use koap::baselines::Method;
use koap::harness::{EnvSpec, ExperimentConfig};

/// Avoid-task experiment shrunk to run in seconds.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_env(EnvSpec::default());
    cfg.dataset.pool_size = 40;
    cfg.planner.train.steps = 60;
    cfg.planner.arch.hidden = vec![32];
    cfg.controller.koap.train.steps = 60;
    cfg.controller.stage2_steps = 30;
    cfg.controller.diffusion.train.steps = 30;
    cfg.controller.diffusion.arch.hidden = vec![16];
    cfg.rollout.episodes = 2;
    cfg.rollout.seeds = vec![0, 1, 2];
    cfg.matrix.methods = vec![Method::Koap, Method::Dd];
    cfg.matrix.levels = vec![0.05, 0.5];
    cfg
}
