use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{make_env, Env, EnvConfig, Observation, Transition};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

/// Anything that maps a batch of observations to actions.
pub trait Policy {
    fn act(&mut self, observations: &[Observation]) -> Result<Vec<usize>>;
    /// State-value estimates used to bootstrap truncated rollouts.
    fn values(&mut self, observations: &[Observation]) -> Result<Vec<f64>>;
}

/// Uniform random actions with zero value estimates.
pub struct RandomPolicy {
    num_actions: usize,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(num_actions: usize, seed: u64) -> Self {
        RandomPolicy {
            num_actions,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, observations: &[Observation]) -> Result<Vec<usize>> {
        Ok(observations.iter().map(|_| self.rng.gen_range(0..self.num_actions)).collect())
    }

    fn values(&mut self, observations: &[Observation]) -> Result<Vec<f64>> {
        Ok(vec![0.0; observations.len()])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub env_id: usize,
    pub extrinsic_return: f64,
    pub length: usize,
    pub success: bool,
    pub trap_steps: usize,
}

#[derive(Clone, Debug, Default)]
struct EpisodeTracker {
    ret: f64,
    length: usize,
    trap_steps: usize,
}

/// `num_envs × num_steps` transitions collected in lockstep.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    /// Indexed `[env][step]`.
    pub transitions: Vec<Vec<Transition>>,
    /// Value of each env's final next state; zero when the rollout ended on
    /// a terminal transition.
    pub bootstrap_values: Vec<f64>,
    pub env_ids: Vec<usize>,
}

impl RolloutBatch {
    pub fn num_envs(&self) -> usize {
        self.transitions.len()
    }

    pub fn num_steps(&self) -> usize {
        self.transitions.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.num_envs() * self.num_steps()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All transitions, env-major.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.transitions.iter().flatten()
    }
}

/// Synchronous set of environments that auto-reset on episode end.
pub struct VecEnv {
    envs: Vec<Box<dyn Env>>,
    observations: Vec<Observation>,
    trackers: Vec<EpisodeTracker>,
    completed: Vec<EpisodeRecord>,
    num_actions: usize,
}

impl VecEnv {
    pub fn new(config: &EnvConfig, num_envs: usize, frame_stack: usize, seed: u64) -> Result<Self> {
        if num_envs == 0 {
            return Err(Error::config("num_envs must be positive"));
        }
        let envs = (0..num_envs)
            .map(|i| make_env(config, frame_stack, derive_seed(seed, 100 + i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_envs(envs, seed))
    }

    pub fn from_envs(mut envs: Vec<Box<dyn Env>>, seed: u64) -> Self {
        let observations = envs
            .iter_mut()
            .enumerate()
            .map(|(i, e)| e.reset(Some(derive_seed(seed, 100 + i as u64))))
            .collect();
        let num_actions = envs.first().map_or(0, |e| e.num_actions());
        VecEnv {
            trackers: vec![EpisodeTracker::default(); envs.len()],
            envs,
            observations,
            completed: Vec::new(),
            num_actions,
        }
    }

    pub fn num_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn obs_dim(&self) -> usize {
        self.envs[0].obs_dim()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Episodes finished since the last call.
    pub fn drain_completed(&mut self) -> Vec<EpisodeRecord> {
        std::mem::take(&mut self.completed)
    }
}

/// Steps every environment `num_steps` times in fixed env order.
pub fn vec_collect<P: Policy + ?Sized>(venv: &mut VecEnv, policy: &mut P, num_steps: usize) -> Result<RolloutBatch> {
    let n = venv.num_envs();
    let mut transitions: Vec<Vec<Transition>> = (0..n).map(|_| Vec::with_capacity(num_steps)).collect();
    for _ in 0..num_steps {
        let actions = policy.act(&venv.observations)?;
        if actions.len() != n {
            return Err(Error::PolicyOutput(format!("{} actions for {n} environments", actions.len())));
        }
        if let Some(&bad) = actions.iter().find(|&&a| a >= venv.num_actions) {
            return Err(Error::PolicyOutput(format!(
                "action {bad} outside the {} available",
                venv.num_actions
            )));
        }
        for (i, &a) in actions.iter().enumerate() {
            let t = venv.envs[i].step(a)?;
            let tracker = &mut venv.trackers[i];
            tracker.ret += t.extrinsic_reward;
            tracker.length += 1;
            tracker.trap_steps += t.info.in_trap as usize;
            if t.done {
                venv.completed.push(EpisodeRecord {
                    env_id: i,
                    extrinsic_return: tracker.ret,
                    length: tracker.length,
                    success: t.info.success,
                    trap_steps: tracker.trap_steps,
                });
                *tracker = EpisodeTracker::default();
                venv.observations[i] = venv.envs[i].reset(None);
            } else {
                venv.observations[i] = t.next_state.clone();
            }
            transitions[i].push(t);
        }
    }
    let tails: Vec<Observation> = transitions
        .iter()
        .map(|ts| ts.last().map(|t| t.next_state.clone()).unwrap_or_default())
        .collect();
    let mut bootstrap_values = if num_steps > 0 { policy.values(&tails)? } else { vec![0.0; n] };
    if bootstrap_values.len() != n {
        return Err(Error::PolicyOutput(format!("{} values for {n} environments", bootstrap_values.len())));
    }
    for (v, ts) in bootstrap_values.iter_mut().zip(&transitions) {
        if ts.last().is_some_and(|t| t.done) {
            *v = 0.0;
        }
    }
    Ok(RolloutBatch {
        transitions,
        bootstrap_values,
        env_ids: (0..n).collect(),
    })
}
