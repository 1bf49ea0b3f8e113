//! Experiment plumbing: run configs, checkpoint metrics and the route
//! classifier, seed sweeps with CSV/JSON output, the exact-oracle runner,
//! and learning-curve plots.

mod config;
mod metrics;
mod plot;
mod run;

pub use config::{apply_override, EnvironmentConfig, EvaluationConfig, RunConfig};
pub use metrics::{
    classify_trajectory, empirical_cvar_of_returns, episode_return, evaluate_episodes, read_metrics_csv,
    read_metrics_csv_from, write_metrics_csv, write_metrics_csv_to, CheckpointEvaluator, RunMetrics,
    TrajectoryClass, METRICS_HEADER,
};
pub use plot::{load_run, plot_runs, PlotMetric};
pub use run::{
    default_out_root, evaluate_policy_rollouts, nominal_trace, run_experiment, run_oracle, run_seed, summarize,
    write_state_csv, CheckpointSummary, ExperimentReport, OracleReport, SeedFailure, SeedRun, Stat, Summary,
    OUT_ROOT_ENV,
};
