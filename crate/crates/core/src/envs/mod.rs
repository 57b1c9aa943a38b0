//! Ground-truth worlds: a linear time-invariant oracle with its least-squares
//! identifier, and the planar obstacle-avoidance task with a two-mode
//! scripted expert.

pub mod avoid;
pub mod dmdc;
pub mod lti;

pub use avoid::{avoid_step, classify_mode, expert_rollout, AvoidConfig, AvoidEnv, Disc, ExpertPolicy, Mode, Status};
pub use dmdc::{dmdc_fit, one_step_error, regressor_rank};
pub use lti::{lti_generate, lti_step, LtiSystem};
