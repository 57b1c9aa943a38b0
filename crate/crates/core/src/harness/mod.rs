//! Experiment orchestration: demonstration pools split into nested label
//! levels, the receding-horizon evaluation loop, and the resumable
//! method x level x observation-fraction x seed matrix.

mod dataset;
mod matrix;
mod rollout;

pub use dataset::{build_levels, build_levels_with_observations, level_count, DatasetBundle, EnvSpec};
pub use matrix::{
    evaluate_controller, merge_cells, run_matrix, CellResult, DatasetConfig, ExperimentConfig, MatrixConfig,
    MatrixSummary, SummaryRow, SEED_ENV_VAR,
};
pub use rollout::{
    episode_seed, history_at, mean_std, plan_seed, rollout, run_episodes, success_rate, LtiEnv, Planner, Policy,
    RolloutConfig, RolloutEnv, RolloutRecord,
};
