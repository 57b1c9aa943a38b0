//! Conditional denoising diffusion over future states (the planner) and, with
//! the same machinery, over future actions (the diffusion-policy baseline).
//!
//! Targets are generated as a flat `horizon x dim` block conditioned on the
//! `history + 1` most recent states. State plans are encoded as offsets from
//! the current state, so the sampled plan is anchored at `x_t` by
//! construction and its first row is `x_t` verbatim.

pub mod diffusion;
pub mod schedule;

pub use diffusion::{
    sample_plan, step_embedding, train_action_diffusion, train_planner, DiffusionArch, DiffusionConfig,
    DiffusionLayout, DiffusionModel, Plan, TargetKind, CHECKPOINT_KIND,
};
pub use schedule::{q_sample, q_sample_with, NoiseSchedule};

#[cfg(test)]
mod tests;
