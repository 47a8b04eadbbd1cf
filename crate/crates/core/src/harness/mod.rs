//! Training, evaluation and run-comparison utilities.

pub mod compare;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod plots;
pub mod probe;
pub mod returns;
pub mod scores;
pub mod train;

pub use compare::{compare, median_rollouts_to_success, run_dir, CompareOutput};
pub use config::TrainerConfig;
pub use eval::{evaluate, evaluate_model, EvalReport};
pub use metrics::{feature_std, read_column, read_metrics, MetricsRecord, RunLogger, METRICS_COLUMNS};
pub use model::{ActionMode, AgentModel, CheckpointMeta, ModelPolicy, ModelSpec};
pub use plots::{emit_plots, PlotSummary, Series};
pub use probe::{noisy_tv_probe, noisy_tv_probe_seeds, trap_time_comparison, ProbeBucket, ProbeConfig, ProbeReport, TrapTimeRow};
pub use returns::{compute_returns, discounted_returns, Returns};
pub use scores::{normalize_scores, NormalizedScores, ScoreTable};
pub use train::{train, RunArtifacts, RunSummary};
