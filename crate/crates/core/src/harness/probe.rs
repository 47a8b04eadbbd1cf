use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainerConfig;
use super::model::{AgentModel, ModelSpec};
use super::train::train;
use crate::agents::{AgentKind, NetworkConfig};
use crate::curiosity::{curiosity_forward, CuriosityConfig, CuriosityVariant};
use crate::diff::{adam_step, AdamConfig, Graph, OptimizerState, Tensor};
use crate::envs::{vec_collect, EnvConfig, RandomPolicy, VecEnv};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub env: EnvConfig,
    pub variant: CuriosityVariant,
    pub total_steps: usize,
    pub bucket_steps: usize,
    pub num_envs: usize,
    pub rollout_steps: usize,
    pub frame_stack: usize,
    pub network: NetworkConfig,
    pub optimizer: AdamConfig,
    pub curiosity: CuriosityConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            env: EnvConfig::noisy_tv_8x8(),
            variant: CuriosityVariant::Icm,
            total_steps: 100_000,
            bucket_steps: 5_000,
            num_envs: 4,
            rollout_steps: 5,
            frame_stack: 1,
            network: NetworkConfig::default(),
            optimizer: AdamConfig::default(),
            curiosity: CuriosityConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeBucket {
    /// Env steps at the end of the bucket.
    pub env_steps: usize,
    pub in_trap_mean: Option<f64>,
    pub out_trap_mean: Option<f64>,
    pub in_trap_count: usize,
    pub out_trap_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub buckets: Vec<ProbeBucket>,
    /// Last in-trap bucket mean over the first.
    pub in_trap_retention: f64,
    /// Least-squares slope of out-of-trap means against bucket index.
    pub out_trap_slope: f64,
    pub out_trap_first: f64,
    pub out_trap_last: f64,
}

impl ProbeReport {
    /// In-trap reward keeps at least `min_retention` of its initial level
    /// while the out-of-trap reward trends down.
    pub fn passes(&self, min_retention: f64) -> bool {
        self.in_trap_retention >= min_retention && self.out_trap_slope < 0.0
    }

    fn from_buckets(buckets: Vec<ProbeBucket>) -> Result<Self> {
        let ins: Vec<f64> = buckets.iter().filter_map(|b| b.in_trap_mean).collect();
        let outs: Vec<f64> = buckets.iter().filter_map(|b| b.out_trap_mean).collect();
        if ins.len() < 2 || outs.len() < 2 {
            return Err(Error::Missing("trap and non-trap visits in at least two buckets".into()));
        }
        Ok(ProbeReport {
            in_trap_retention: ins[ins.len() - 1] / ins[0],
            out_trap_slope: slope(&outs),
            out_trap_first: outs[0],
            out_trap_last: outs[outs.len() - 1],
            buckets,
        })
    }
}

fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Trains only the dynamics models under a frozen uniform-random policy and
/// tracks intrinsic reward inside and outside the trap region. Rewards are
/// computed before each update, so every bucket sees held-out transitions.
pub fn noisy_tv_probe(config: &ProbeConfig, seed: u64) -> Result<ProbeReport> {
    if config.variant == CuriosityVariant::None {
        return Err(Error::config("probe needs a curiosity variant"));
    }
    if config.env.trap.is_none() {
        return Err(Error::config("probe needs an environment with a trap region"));
    }
    if config.bucket_steps == 0 || config.total_steps < config.bucket_steps {
        return Err(Error::config("probe needs total_steps >= bucket_steps > 0"));
    }
    let mut venv = VecEnv::new(&config.env, config.num_envs, config.frame_stack, derive_seed(seed, 10))?;
    let spec = ModelSpec {
        agent: AgentKind::Icm,
        obs_dim: venv.obs_dim(),
        num_actions: venv.num_actions(),
        network: config.network.clone(),
        curiosity: config.variant,
    };
    let mut model = AgentModel::new(spec, derive_seed(seed, 20))?;
    let mut opt = OptimizerState::new(config.optimizer, &model.store)?;
    let mut policy = RandomPolicy::new(venv.num_actions(), derive_seed(seed, 30));
    let beta = config.curiosity.beta;

    let mut buckets = Vec::new();
    let (mut in_sum, mut in_n, mut out_sum, mut out_n) = (0.0, 0usize, 0.0, 0usize);
    let mut steps = 0;
    while steps < config.total_steps {
        let batch = vec_collect(&mut venv, &mut policy, config.rollout_steps)?;
        let rows = batch.len();
        let states: Vec<f64> = batch.iter().flat_map(|t| t.state.iter().copied()).collect();
        let next: Vec<f64> = batch.iter().flat_map(|t| t.next_state.iter().copied()).collect();
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let grads = {
            let dm = model.dynamics.as_ref().expect("curiosity variant has dynamics models");
            let mut g = Graph::new(&model.store);
            let x = g.constant(Tensor::matrix(rows, model.spec.obs_dim, states)?);
            let x_next = g.constant(Tensor::matrix(rows, model.spec.obs_dim, next)?);
            let phi = model.extractor.extract_features(&mut g, x)?;
            let phi_next = model.extractor.extract_features(&mut g, x_next)?;
            let out = curiosity_forward(&mut g, dm, &config.curiosity, phi, phi_next, &actions)?;
            for (t, r) in batch.iter().zip(&out.intrinsic_rewards) {
                if t.info.in_trap {
                    in_sum += r;
                    in_n += 1;
                } else {
                    out_sum += r;
                    out_n += 1;
                }
            }
            let f = g.scale(out.j_fwd, beta);
            let i = g.scale(out.j_inv, 1.0 - beta);
            let loss = g.add(f, i)?;
            g.backward(loss)?
        };
        model.store.accumulate(&grads);
        adam_step(&mut model.store, &mut opt)?;
        steps += rows;
        if steps % config.bucket_steps < rows || steps >= config.total_steps {
            buckets.push(ProbeBucket {
                env_steps: steps,
                in_trap_mean: (in_n > 0).then(|| in_sum / in_n as f64),
                out_trap_mean: (out_n > 0).then(|| out_sum / out_n as f64),
                in_trap_count: in_n,
                out_trap_count: out_n,
            });
            (in_sum, in_n, out_sum, out_n) = (0.0, 0, 0.0, 0);
        }
    }

    ProbeReport::from_buckets(buckets)
}

/// Runs the probe once per seed and summarizes the bucket means averaged
/// across seeds. Also returns the per-seed reports.
pub fn noisy_tv_probe_seeds(config: &ProbeConfig, seeds: &[u64]) -> Result<(ProbeReport, Vec<ProbeReport>)> {
    if seeds.is_empty() {
        return Err(Error::EmptyInput("probe seeds"));
    }
    let runs = seeds
        .iter()
        .map(|&s| noisy_tv_probe(config, s))
        .collect::<Result<Vec<_>>>()?;
    let mean_of = |xs: Vec<Option<f64>>| {
        let v: Vec<f64> = xs.into_iter().flatten().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let buckets = (0..runs[0].buckets.len())
        .map(|i| ProbeBucket {
            env_steps: runs[0].buckets[i].env_steps,
            in_trap_mean: mean_of(runs.iter().map(|r| r.buckets[i].in_trap_mean).collect()),
            out_trap_mean: mean_of(runs.iter().map(|r| r.buckets[i].out_trap_mean).collect()),
            in_trap_count: runs.iter().map(|r| r.buckets[i].in_trap_count).sum(),
            out_trap_count: runs.iter().map(|r| r.buckets[i].out_trap_count).sum(),
        })
        .collect();
    Ok((ProbeReport::from_buckets(buckets)?, runs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapTimeRow {
    pub agent: AgentKind,
    /// Per seed, the share of training steps spent in the trap.
    pub fractions: Vec<f64>,
    pub mean: f64,
}

/// Trains each agent on a noisy-TV config for every seed and collects the
/// fraction of training steps spent inside the trap.
pub fn trap_time_comparison(
    config: &TrainerConfig,
    agents: &[AgentKind],
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<TrapTimeRow>> {
    if config.env.trap.is_none() {
        return Err(Error::config("trap-time comparison needs a trap region"));
    }
    agents
        .iter()
        .map(|&agent| {
            let cfg = TrainerConfig {
                agent,
                ..config.clone()
            };
            let fractions = seeds
                .iter()
                .map(|&s| {
                    let run = train(&cfg, s, &out.join(agent.as_str()).join(format!("seed-{s}")))?;
                    run.summary
                        .trap_time_fraction
                        .ok_or_else(|| Error::Missing("trap_time_fraction".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            let mean = fractions.iter().sum::<f64>() / fractions.len().max(1) as f64;
            Ok(TrapTimeRow { agent, fractions, mean })
        })
        .collect()
}
