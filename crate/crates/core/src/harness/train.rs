use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainerConfig;
use super::eval::{evaluate_model, EvalReport};
use super::metrics::{feature_std, weight_histogram, DiagnosticsRecord, MetricsRecord, RunLogger};
use super::model::{ActionMode, AgentModel, CheckpointMeta, ModelPolicy, ModelSpec};
use super::returns::compute_returns;
use crate::agents::{a2c_loss, AgentKind};
use crate::attention::row_entropies;
use crate::curiosity::{combined_loss, curiosity_forward, CuriosityVariant};
use crate::diff::{adam_step, Graph, OptimizerState, Tensor};
use crate::envs::{vec_collect, EnvKind, EpisodeRecord, RolloutBatch, VecEnv};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub agent: AgentKind,
    pub curiosity: CuriosityVariant,
    pub env: String,
    pub seed: u64,
    pub rollouts: usize,
    pub env_steps: usize,
    pub episodes: usize,
    /// Highest value of the windowed mean extrinsic reward over all logged
    /// rows.
    pub best_mean_reward: Option<f64>,
    /// First rollout at which the success rate over a full reward window
    /// reached `success_threshold`.
    pub first_sustained_success: Option<usize>,
    /// First rollout at which an in-training evaluation reached
    /// `stop_on_eval_success`.
    pub first_eval_success: Option<usize>,
    /// Sum of every extrinsic reward the environments emitted.
    pub extrinsic_reward_total: f64,
    /// Sum of the returns of completed episodes.
    pub completed_episode_return_total: f64,
    pub trap_time_fraction: Option<f64>,
    pub final_eval: Option<EvalReport>,
}

impl RunSummary {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub struct RunArtifacts {
    pub dir: PathBuf,
    pub metrics: Vec<MetricsRecord>,
    pub summary: RunSummary,
    pub model: AgentModel,
}

/// Scalars from one parameter update.
#[derive(Clone, Debug, Default)]
struct UpdateStats {
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    j_fwd: f64,
    j_inv: f64,
    intrinsic_sum: f64,
    transitions: usize,
    feature_std: f64,
    attn_entropy: Option<f64>,
    feature_mass: Option<f64>,
    hist: Option<[f64; 8]>,
    grad: [f64; 8],
}

#[derive(Default)]
struct Interval {
    updates: usize,
    sums: UpdateStats,
    attn_entropy: (f64, usize),
    feature_mass: (f64, usize),
    hist: Option<([f64; 8], usize)>,
    trap_steps: usize,
    steps: usize,
}

impl Interval {
    fn add(&mut self, s: &UpdateStats) {
        self.updates += 1;
        let t = &mut self.sums;
        t.policy_loss += s.policy_loss;
        t.value_loss += s.value_loss;
        t.entropy += s.entropy;
        t.j_fwd += s.j_fwd;
        t.j_inv += s.j_inv;
        t.intrinsic_sum += s.intrinsic_sum;
        t.transitions += s.transitions;
        t.feature_std += s.feature_std;
        for (a, b) in t.grad.iter_mut().zip(&s.grad) {
            *a += b;
        }
        if let Some(h) = s.attn_entropy {
            self.attn_entropy.0 += h;
            self.attn_entropy.1 += 1;
        }
        if let Some(m) = s.feature_mass {
            self.feature_mass.0 += m;
            self.feature_mass.1 += 1;
        }
        if let Some(h) = s.hist {
            let (acc, n) = self.hist.get_or_insert(([0.0; 8], 0));
            acc.iter_mut().zip(&h).for_each(|(a, b)| *a += b);
            *n += 1;
        }
    }
}

fn mean_of((sum, n): (f64, usize)) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

const GRAD_BLOCKS: [&str; 7] = [
    "features",
    "actor",
    "critic",
    "attn_",
    "curiosity.forward",
    "curiosity.inverse",
    "curiosity.attn",
];

/// One forward/backward/Adam step on a collected batch.
fn update(
    model: &mut AgentModel,
    opt: &mut OptimizerState,
    batch: &RolloutBatch,
    config: &TrainerConfig,
) -> Result<UpdateStats> {
    let (n_envs, n_steps) = (batch.num_envs(), batch.num_steps());
    let states: Vec<_> = batch.iter().map(|t| t.state.clone()).collect();
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    let mut stats = UpdateStats {
        transitions: states.len(),
        ..UpdateStats::default()
    };

    let grads = {
        let mut g = Graph::new(&model.store);
        let (phi, out) = model.forward(&mut g, &states)?;
        let curiosity = match &model.dynamics {
            Some(dm) => {
                let next: Vec<f64> = batch.iter().flat_map(|t| t.next_state.iter().copied()).collect();
                let x = g.constant(Tensor::matrix(states.len(), model.spec.obs_dim, next)?);
                let phi_next = model.extractor.extract_features(&mut g, x)?;
                Some(curiosity_forward(&mut g, dm, &config.curiosity, phi, phi_next, &actions)?)
            }
            None => None,
        };
        let intrinsic = curiosity.as_ref().map(|c| c.intrinsic_rewards.as_slice());

        let values = g.value(out.value);
        let mut rewards = Vec::with_capacity(n_envs);
        let mut dones = Vec::with_capacity(n_envs);
        let mut vals = Vec::with_capacity(n_envs);
        for (e, ts) in batch.transitions.iter().enumerate() {
            let base = e * n_steps;
            rewards.push(
                ts.iter()
                    .enumerate()
                    .map(|(t, tr)| tr.extrinsic_reward + intrinsic.map_or(0.0, |r| r[base + t]))
                    .collect::<Vec<_>>(),
            );
            dones.push(ts.iter().map(|tr| tr.done).collect::<Vec<_>>());
            vals.push(values[base..base + n_steps].to_vec());
        }
        let ret = compute_returns(&rewards, &dones, &vals, &batch.bootstrap_values, config.gamma)?;
        let a2c = a2c_loss(&mut g, &out, &actions, &ret.advantages, &ret.returns, config.a2c)?;
        let total = combined_loss(
            &mut g,
            a2c.total,
            curiosity.as_ref().map(|c| (c.j_fwd, c.j_inv)),
            config.curiosity.beta,
        )?;

        stats.policy_loss = g.scalar_value(a2c.policy_loss)?;
        stats.value_loss = g.scalar_value(a2c.value_loss)?;
        stats.entropy = g.scalar_value(a2c.entropy)?;
        stats.feature_std = feature_std(g.value(phi), model.spec.network.feature_dim)?;
        if let Some(c) = &curiosity {
            stats.j_fwd = g.scalar_value(c.j_fwd)?;
            stats.j_inv = g.scalar_value(c.j_inv)?;
            stats.intrinsic_sum = c.intrinsic_rewards.iter().sum();
            stats.attn_entropy = c.weight_entropy();
            stats.feature_mass = c.feature_mass(model.spec.network.feature_dim);
            stats.hist = c.attn_weights.as_ref().map(|(w, cols)| weight_histogram(w, *cols));
        }
        if stats.attn_entropy.is_none() {
            if let Some((w_pi, _)) = out.attention {
                let cols = model.spec.network.feature_dim;
                let h = row_entropies(g.value(w_pi), cols);
                stats.attn_entropy = Some(h.iter().sum::<f64>() / h.len() as f64);
                stats.hist = Some(weight_histogram(g.value(w_pi), cols));
            }
        }
        let total_value = g.scalar_value(total)?;
        if !total_value.is_finite() {
            return Err(Error::config(format!("non-finite loss {total_value}")));
        }
        g.backward(total)?
    };

    model.store.accumulate(&grads);
    stats.grad[0] = model.store.grad_norm();
    for (i, prefix) in GRAD_BLOCKS.iter().enumerate() {
        stats.grad[i + 1] = model.store.grad_norm_of(prefix);
    }
    if let Some(c) = config.max_grad_norm {
        model.store.clip_grad_norm(c);
    }
    adam_step(&mut model.store, opt)?;
    Ok(stats)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains one agent with one seed, writing `config.toml`, `metrics.csv`,
/// `diagnostics.csv`, checkpoints and `summary.json` into `out_dir`.
pub fn train(config: &TrainerConfig, seed: u64, out_dir: &Path) -> Result<RunArtifacts> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let run_config = TrainerConfig {
        seeds: vec![seed],
        out_dir: out_dir.to_path_buf(),
        ..config.clone()
    };
    run_config.save(&out_dir.join("config.toml"))?;

    let started = Instant::now();
    let variant = config.curiosity.resolve(config.agent);
    let mut venv = VecEnv::new(&config.env, config.num_envs, config.frame_stack, derive_seed(seed, 10))?;
    let spec = ModelSpec {
        agent: config.agent,
        obs_dim: venv.obs_dim(),
        num_actions: venv.num_actions(),
        network: config.network.clone(),
        curiosity: variant,
    };
    let mut model = AgentModel::new(spec, derive_seed(seed, 20))?;
    let mut opt = OptimizerState::new(config.optimizer, &model.store)?;
    let mut action_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 30));
    let mut logger = RunLogger::create(out_dir)?;
    let noisy = config.env.kind == EnvKind::NoisyTv;
    let steps_per_rollout = config.num_envs * config.rollout_steps;
    let meta = |rollouts: usize, model: &AgentModel| CheckpointMeta {
        model: model.spec.clone(),
        env: config.env.clone(),
        frame_stack: config.frame_stack,
        seed,
        rollouts,
    };

    let mut window: VecDeque<EpisodeRecord> = VecDeque::with_capacity(config.reward_window);
    let mut interval = Interval::default();
    let mut metrics = Vec::new();
    let mut summary = RunSummary {
        agent: config.agent,
        curiosity: variant,
        env: config.env.label(),
        seed,
        rollouts: 0,
        env_steps: 0,
        episodes: 0,
        best_mean_reward: None,
        first_sustained_success: None,
        first_eval_success: None,
        extrinsic_reward_total: 0.0,
        completed_episode_return_total: 0.0,
        trap_time_fraction: None,
        final_eval: None,
    };
    let mut trap_total = 0usize;

    for rollout in 1..=config.total_rollouts {
        let step = |model: &mut AgentModel,
                    opt: &mut OptimizerState,
                    venv: &mut VecEnv,
                    rng: &mut ChaCha8Rng|
         -> Result<(RolloutBatch, UpdateStats)> {
            let batch = {
                let mut policy = ModelPolicy::new(&*model, &mut *rng, ActionMode::Sample);
                vec_collect(venv, &mut policy, config.rollout_steps)?
            };
            let stats = update(model, opt, &batch, config)?;
            Ok((batch, stats))
        };
        let (batch, stats) = step(&mut model, &mut opt, &mut venv, &mut action_rng).map_err(|e| Error::Rollout {
            rollout,
            source: Box::new(e),
        })?;

        let trap_steps = batch.iter().filter(|t| t.info.in_trap).count();
        trap_total += trap_steps;
        interval.trap_steps += trap_steps;
        interval.steps += steps_per_rollout;
        summary.extrinsic_reward_total += batch.iter().map(|t| t.extrinsic_reward).sum::<f64>();
        interval.add(&stats);
        for ep in venv.drain_completed() {
            summary.episodes += 1;
            summary.completed_episode_return_total += ep.extrinsic_return;
            if window.len() == config.reward_window {
                window.pop_front();
            }
            window.push_back(ep);
        }
        summary.rollouts = rollout;
        summary.env_steps = rollout * steps_per_rollout;

        let success_rate = (!window.is_empty())
            .then(|| window.iter().filter(|e| e.success).count() as f64 / window.len() as f64);
        let mut stop = false;
        if summary.first_sustained_success.is_none()
            && window.len() == config.reward_window
            && success_rate.is_some_and(|s| s >= config.success_threshold)
        {
            summary.first_sustained_success = Some(rollout);
            stop |= config.stop_on_sustained_success;
        }
        if config.eval_interval > 0 && rollout % config.eval_interval == 0 {
            let report = evaluate_model(
                &model,
                &config.env,
                config.frame_stack,
                config.eval_episodes,
                ActionMode::Greedy,
                derive_seed(seed, 50 + rollout as u64),
            )?;
            if let Some(th) = config.stop_on_eval_success {
                if report.success_rate >= th && summary.first_eval_success.is_none() {
                    summary.first_eval_success = Some(rollout);
                    stop = true;
                }
            }
        }

        let last = stop || rollout == config.total_rollouts;
        if rollout % config.log_interval == 0 || last {
            let n = interval.updates as f64;
            let s = &interval.sums;
            let mean_reward = (!window.is_empty())
                .then(|| window.iter().map(|e| e.extrinsic_return).sum::<f64>() / window.len() as f64);
            let record = MetricsRecord {
                rollout_idx: rollout,
                env_steps: summary.env_steps,
                mean_extrinsic_reward: mean_reward,
                mean_intrinsic_reward: s.intrinsic_sum / s.transitions as f64,
                policy_loss: s.policy_loss / n,
                value_loss: s.value_loss / n,
                entropy: s.entropy / n,
                j_fwd: s.j_fwd / n,
                j_inv: s.j_inv / n,
                feature_std: s.feature_std / n,
                attn_weight_entropy: mean_of(interval.attn_entropy),
                trap_time_fraction: noisy.then(|| interval.trap_steps as f64 / interval.steps as f64),
                wall_time_s: config.record_wall_time.then(|| started.elapsed().as_secs_f64()),
            };
            let g = s.grad.map(|v| v / n);
            let diag = DiagnosticsRecord {
                rollout_idx: rollout,
                windowed_success: success_rate,
                episodes_completed: summary.episodes,
                grad_norm_total: g[0],
                grad_norm_features: g[1],
                grad_norm_actor: g[2],
                grad_norm_critic: g[3],
                grad_norm_head_attention: g[4],
                grad_norm_forward: g[5],
                grad_norm_inverse: g[6],
                grad_norm_curiosity_attention: g[7],
                attn_feature_mass: mean_of(interval.feature_mass),
                attn_weight_hist: interval.hist.map(|(h, k)| h.map(|v| v / k as f64)),
            };
            logger.log(&record, &diag)?;
            if let Some(r) = record.mean_extrinsic_reward {
                summary.best_mean_reward = Some(summary.best_mean_reward.map_or(r, |b: f64| b.max(r)));
            }
            metrics.push(record);
            interval = Interval::default();
        }
        if config.checkpoint_interval > 0 && rollout % config.checkpoint_interval == 0 && !last {
            model
                .checkpoint(Some(&opt), &meta(rollout, &model))?
                .save(&out_dir.join(format!("checkpoint-{rollout}.json")))?;
        }
        if stop {
            break;
        }
    }

    model
        .checkpoint(Some(&opt), &meta(summary.rollouts, &model))?
        .save(&out_dir.join("checkpoint.json"))?;
    if noisy && summary.env_steps > 0 {
        summary.trap_time_fraction = Some(trap_total as f64 / summary.env_steps as f64);
    }
    if config.eval_episodes > 0 {
        summary.final_eval = Some(evaluate_model(
            &model,
            &config.env,
            config.frame_stack,
            config.eval_episodes,
            ActionMode::Greedy,
            derive_seed(seed, 60),
        )?);
    }
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(RunArtifacts {
        dir: out_dir.to_path_buf(),
        metrics,
        summary,
        model,
    })
}
