//! Plan-then-control imitation learning from mostly action-free
//! demonstrations.
//!
//! A diffusion [`planner`] proposes future states from observation-only
//! trajectories; a [`koopman`] latent-action controller turns a plan into
//! real actions through a linear decoder fitted on a few labeled
//! trajectories. [`baselines`], oracle environments ([`envs`]) and an
//! experiment [`harness`] complete the stack.

pub mod baselines;
pub mod data;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod koopman;
pub mod numerics;
pub mod planner;

pub use error::{KoapError, Result};
