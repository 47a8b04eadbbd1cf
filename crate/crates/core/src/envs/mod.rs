//! Grid environments standing in for Atari: a sparse maze, a shaped dense
//! variant and a noisy-TV trap, plus sticky actions, frame stacking and
//! synchronous vectorized collection.

mod grid;
mod vec_env;
mod wrappers;

pub use grid::{EnvConfig, EnvKind, GridWorld, Layout, TrapRegion, CHANNELS, NUM_ACTIONS};
pub use vec_env::{vec_collect, EpisodeRecord, Policy, RandomPolicy, RolloutBatch, VecEnv};
pub use wrappers::{stack, FrameStack, StickyActions};

use crate::error::Result;
use crate::seeding::derive_seed;

pub type Observation = Vec<f64>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepInfo {
    /// Agent occupies the trap region after the step.
    pub in_trap: bool,
    /// The sticky-action wrapper replaced the requested action.
    pub repeated: bool,
    pub executed_action: usize,
    pub success: bool,
    /// Episode ended by the step limit rather than by reaching the goal.
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: usize,
    pub extrinsic_reward: f64,
    pub next_state: Observation,
    pub done: bool,
    pub info: StepInfo,
}

pub trait Env: Send {
    fn obs_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Starts a new episode. `Some(seed)` reseeds every random stream.
    fn reset(&mut self, seed: Option<u64>) -> Observation;
    fn step(&mut self, action: usize) -> Result<Transition>;
}

/// Builds the full wrapper stack for one environment instance.
pub fn make_env(config: &EnvConfig, frame_stack: usize, seed: u64) -> Result<Box<dyn Env>> {
    let grid = GridWorld::new(EnvConfig {
        seed: derive_seed(seed, 1),
        ..config.clone()
    })?;
    let env: Box<dyn Env> = if config.sticky_action_prob > 0.0 {
        Box::new(FrameStack::new(
            StickyActions::new(grid, config.sticky_action_prob, derive_seed(seed, 2)),
            frame_stack,
        ))
    } else {
        Box::new(FrameStack::new(grid, frame_stack))
    };
    Ok(env)
}
