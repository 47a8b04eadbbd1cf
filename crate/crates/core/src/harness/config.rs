use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{A2cCoefficients, AgentKind, NetworkConfig};
use crate::curiosity::CuriosityConfig;
use crate::diff::AdamConfig;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};

/// Everything needed to reproduce a training run. Loaded from TOML; unknown
/// keys are rejected at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub agent: AgentKind,
    pub total_rollouts: usize,
    pub num_envs: usize,
    pub rollout_steps: usize,
    pub frame_stack: usize,
    pub gamma: f64,
    /// Seeds used by `compare`; `train` uses the first unless overridden.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Rollouts between metrics rows.
    pub log_interval: usize,
    /// Rollouts between periodic checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: usize,
    /// Rollouts between greedy evaluations during training; 0 disables.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Completed episodes in the moving reward and success windows.
    pub reward_window: usize,
    /// Windowed success rate that counts as sustained success.
    pub success_threshold: f64,
    /// Stop once sustained success is reached.
    pub stop_on_sustained_success: bool,
    /// Stop once an in-training evaluation reaches this success rate.
    pub stop_on_eval_success: Option<f64>,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    /// Fill the `wall_time_s` column. Off by default so logs are
    /// byte-reproducible.
    pub record_wall_time: bool,
    pub env: EnvConfig,
    pub network: NetworkConfig,
    pub optimizer: AdamConfig,
    pub curiosity: CuriosityConfig,
    pub a2c: A2cCoefficients,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            agent: AgentKind::A2c,
            total_rollouts: 50_000,
            num_envs: 4,
            rollout_steps: 5,
            frame_stack: 4,
            gamma: 0.99,
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: PathBuf::from("runs"),
            log_interval: 100,
            checkpoint_interval: 10_000,
            eval_interval: 0,
            eval_episodes: 10,
            reward_window: 100,
            success_threshold: 0.5,
            stop_on_sustained_success: false,
            stop_on_eval_success: None,
            max_grad_norm: Some(40.0),
            record_wall_time: false,
            env: EnvConfig::default(),
            network: NetworkConfig::default(),
            optimizer: AdamConfig::default(),
            curiosity: CuriosityConfig::default(),
            a2c: A2cCoefficients::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("total_rollouts", self.total_rollouts),
            ("num_envs", self.num_envs),
            ("rollout_steps", self.rollout_steps),
            ("frame_stack", self.frame_stack),
            ("log_interval", self.log_interval),
            ("reward_window", self.reward_window),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        if self.eval_interval > 0 && self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes must be positive when evaluating"));
        }
        if !(0.0..=1.0).contains(&self.success_threshold) {
            return Err(Error::config("success_threshold must lie in [0, 1]"));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return Err(Error::config("max_grad_norm must be positive"));
            }
        }
        self.env.validate()?;
        self.network.validate()?;
        self.optimizer.validate()?;
        self.curiosity.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainerConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }
}
