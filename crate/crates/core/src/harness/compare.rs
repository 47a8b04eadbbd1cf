use std::fs;
use std::path::{Path, PathBuf};

use super::config::TrainerConfig;
use super::plots::{emit_plots, PlotSummary};
use super::scores::{normalize_scores, NormalizedScores, ScoreTable};
use super::train::{train, RunSummary};
use crate::agents::AgentKind;
use crate::error::{Error, Result};

pub struct CompareOutput {
    /// Every run directory, grouped per config in input order.
    pub runs: Vec<Vec<PathBuf>>,
    pub summaries: Vec<RunSummary>,
    pub plots: Vec<PlotSummary>,
    pub scores: NormalizedScores,
}

/// `out/<env label>/<agent>/seed-<s>`.
pub fn run_dir(out: &Path, config: &TrainerConfig, agent: AgentKind, seed: u64) -> PathBuf {
    out.join(config.env.label()).join(agent.as_str()).join(format!("seed-{seed}"))
}

/// Trains every agent with every seed on every config, then writes reward
/// and feature-std plots per environment and the normalized score table.
pub fn compare(configs: &[TrainerConfig], agents: &[AgentKind], seeds: &[u64], out: &Path) -> Result<CompareOutput> {
    if configs.is_empty() || agents.is_empty() || seeds.is_empty() {
        return Err(Error::EmptyInput("compare"));
    }
    let mut runs = Vec::new();
    let mut summaries = Vec::new();
    let mut plots = Vec::new();
    for cfg in configs {
        let mut dirs = Vec::new();
        for &agent in agents {
            let cfg = TrainerConfig {
                agent,
                ..cfg.clone()
            };
            for &seed in seeds {
                let dir = run_dir(out, &cfg, agent, seed);
                summaries.push(train(&cfg, seed, &dir)?.summary);
                dirs.push(dir);
            }
        }
        let env_dir = out.join(cfg.env.label());
        for metric in ["reward", "feature_std"] {
            plots.push(emit_plots(&dirs, metric, &env_dir.join(format!("{metric}.svg")))?);
        }
        runs.push(dirs);
    }
    let all: Vec<&PathBuf> = runs.iter().flatten().collect();
    let scores = normalize_scores(&ScoreTable::from_runs(&all)?)?;
    let table = scores.render();
    fs::write(out.join("scores.txt"), &table).map_err(|e| Error::io(out, e))?;
    fs::write(out.join("scores.json"), serde_json::to_string_pretty(&scores)?).map_err(|e| Error::io(out, e))?;
    Ok(CompareOutput {
        runs,
        summaries,
        plots,
        scores,
    })
}

/// Median of `first_sustained_success` over runs; runs that never succeed
/// count as `cap + 1`.
pub fn median_rollouts_to_success(summaries: &[&RunSummary], cap: usize) -> Option<f64> {
    if summaries.is_empty() {
        return None;
    }
    let mut v: Vec<usize> = summaries
        .iter()
        .map(|s| s.first_sustained_success.unwrap_or(cap + 1))
        .collect();
    v.sort_unstable();
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    })
}
