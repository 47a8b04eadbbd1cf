use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use curio::agents::AgentKind;
use curio::harness::{
    compare, emit_plots, evaluate, noisy_tv_probe, normalize_scores, ActionMode, ProbeConfig, ScoreTable,
    TrainerConfig,
};
use curio::curiosity::CuriosityVariant;

#[derive(Parser)]
#[command(name = "curio", version, about = "Train and compare curiosity-driven actor-critic agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Greedy,
    Sample,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Reward,
    FeatureStd,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent; writes metrics, checkpoints and a summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on its training environment.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, value_enum, default_value_t = Mode::Greedy)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the agent matrix on each config and emit plots and scores.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to atta2c, icm, icm_attn1, icm_attn2 and rcm.
        #[arg(long, value_delimiter = ',')]
        agents: Option<Vec<AgentKind>>,
    },
    /// Plot a metric across runs, one band per agent.
    Plot {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_enum)]
        metric: Metric,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train only the dynamics models under a random policy on the noisy-TV
    /// grid and report intrinsic reward inside and outside the trap.
    Probe {
        #[arg(long, default_value = "icm")]
        variant: CuriosityVariant,
        #[arg(long, default_value_t = 100_000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the normalized score table for a set of runs.
    Normalize {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, seed, out } => {
            let cfg = TrainerConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let seeds = match seed {
                Some(s) => vec![s],
                None => cfg.seeds.clone(),
            };
            if seeds.is_empty() {
                bail!("no seeds given");
            }
            let root = out.unwrap_or_else(|| cfg.out_dir.clone());
            for s in seeds {
                let dir = root.join(format!("seed-{s}"));
                let run = curio::harness::train(&cfg, s, &dir)?;
                let r = &run.summary;
                println!(
                    "{} seed {s}: {} rollouts, best mean reward {}, sustained success at {}, final eval success {}",
                    r.agent,
                    r.rollouts,
                    fmt_opt(r.best_mean_reward),
                    r.first_sustained_success.map_or("-".into(), |v| v.to_string()),
                    r.final_eval.as_ref().map_or("-".into(), |e| format!("{:.2}", e.success_rate)),
                );
            }
        }
        Command::Eval {
            checkpoint,
            episodes,
            mode,
            seed,
        } => {
            let mode = match mode {
                Mode::Greedy => ActionMode::Greedy,
                Mode::Sample => ActionMode::Sample,
            };
            let report = evaluate(&checkpoint, None, episodes, mode, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Compare {
            configs,
            seeds,
            out,
            agents,
        } => {
            let cfgs = configs
                .iter()
                .map(|p| TrainerConfig::load(p).with_context(|| format!("loading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let agents = agents.unwrap_or_else(|| AgentKind::COMPARED.to_vec());
            let res = compare(&cfgs, &agents, &seeds, &out)?;
            for p in &res.plots {
                println!("wrote {}", p.path.display());
            }
            print!("{}", res.scores.render());
        }
        Command::Plot { runs, metric, out } => {
            let metric = match metric {
                Metric::Reward => "reward",
                Metric::FeatureStd => "feature_std",
            };
            let p = emit_plots(&runs, metric, &out)?;
            println!("wrote {} ({} series)", p.path.display(), p.series.len());
        }
        Command::Probe { variant, steps, seed } => {
            let cfg = ProbeConfig {
                variant,
                total_steps: steps,
                ..ProbeConfig::default()
            };
            let report = noisy_tv_probe(&cfg, seed)?;
            println!("{:>9} {:>12} {:>12}", "env_steps", "in_trap", "out_trap");
            for b in &report.buckets {
                println!("{:>9} {:>12} {:>12}", b.env_steps, fmt_opt(b.in_trap_mean), fmt_opt(b.out_trap_mean));
            }
            println!(
                "in-trap retention {:.3}, out-of-trap slope {:.3e}",
                report.in_trap_retention, report.out_trap_slope
            );
        }
        Command::Normalize { runs } => {
            let scores = normalize_scores(&ScoreTable::from_runs(&runs)?)?;
            print!("{}", scores.render());
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.5}"))
}
