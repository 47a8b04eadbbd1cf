//! Curiosity-driven actor-critic agents.
//!
//! Five agent configurations share one small differentiable substrate:
//! plain A2C, AttA2C (attention-gated actor and critic inputs), ICM with
//! single or double attention over the dynamics-model inputs, and RCM, whose
//! forward loss is an attention-weighted error controlled by the next-state
//! features. Environments are desk-scale grid mazes, including a noisy-TV
//! trap.

pub mod agents;
pub mod attention;
pub mod curiosity;
pub mod diff;
pub mod envs;
pub mod error;
pub mod harness;
pub mod seeding;

pub use error::{Error, Result};
