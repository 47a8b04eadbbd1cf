use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{ActionMode, AgentModel, ModelPolicy};
use crate::diff::Checkpoint;
use crate::envs::{make_env, EnvConfig, EnvKind, Policy};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mode: ActionMode,
    pub mean_return: f64,
    /// Population standard deviation of episode returns.
    pub std_return: f64,
    pub success_rate: f64,
    pub mean_length: f64,
    /// Noisy-TV environments only: share of steps spent in the trap.
    pub trap_time_fraction: Option<f64>,
}

/// Runs `episodes` full episodes of `model` on a single environment.
pub fn evaluate_model(
    model: &AgentModel,
    env: &EnvConfig,
    frame_stack: usize,
    episodes: usize,
    mode: ActionMode,
    seed: u64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::config("evaluation needs at least one episode"));
    }
    let mut e = make_env(env, frame_stack, derive_seed(seed, 40))?;
    if e.obs_dim() != model.spec.obs_dim || e.num_actions() != model.spec.num_actions {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            left: vec![model.spec.obs_dim, model.spec.num_actions],
            right: vec![e.obs_dim(), e.num_actions()],
        });
    }
    let mut policy = ModelPolicy::new(model, ChaCha8Rng::seed_from_u64(derive_seed(seed, 41)), mode);
    let mut returns = Vec::with_capacity(episodes);
    let (mut successes, mut steps, mut trap_steps) = (0usize, 0usize, 0usize);
    for _ in 0..episodes {
        let mut obs = e.reset(None);
        let mut ret = 0.0;
        loop {
            let a = policy.act(std::slice::from_ref(&obs))?[0];
            let t = e.step(a)?;
            ret += t.extrinsic_reward;
            steps += 1;
            trap_steps += t.info.in_trap as usize;
            if t.done {
                successes += t.info.success as usize;
                break;
            }
            obs = t.next_state;
        }
        returns.push(ret);
    }
    let n = episodes as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(EvalReport {
        episodes,
        mode,
        mean_return: mean,
        std_return: var.sqrt(),
        success_rate: successes as f64 / n,
        mean_length: steps as f64 / n,
        trap_time_fraction: (env.kind == EnvKind::NoisyTv).then(|| trap_steps as f64 / steps as f64),
    })
}

/// Loads a checkpoint and evaluates it, on its training environment unless
/// `env` overrides it.
pub fn evaluate(
    checkpoint: &Path,
    env: Option<&EnvConfig>,
    episodes: usize,
    mode: ActionMode,
    seed: u64,
) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (model, meta) = AgentModel::from_checkpoint(&ckpt)?;
    evaluate_model(&model, env.unwrap_or(&meta.env), meta.frame_stack, episodes, mode, seed)
}
