//! Experiment configuration, seed-parallel orchestration, and metric persistence.
//!
//! A run writes to its output directory:
//!
//! - `metrics.csv`: per-seed and aggregate series (see [`write_metrics`]);
//! - `summary.json`: last-epoch aggregates plus experiment-specific records;
//! - `plots.json`: the series to draw and their axis labels;
//! - `config.toml`: the resolved configuration;
//! - `seed_<n>/` (distillation only): oracles, datasets and cluster reports per agent.
//!
//! Each seed owns its random streams, so results do not depend on the thread count.

mod config;
mod metrics;
mod run;

pub use config::{load_config, ExperimentConfig, ExperimentKind};
pub use metrics::{
    read_metrics, read_metrics_from, write_metrics, write_metrics_to, MeanStd, MetricRow,
    PlotManifest, PlotSeries, RunMetrics, SeedLabel, CSV_COLUMNS,
};
pub use run::{
    epochs_to_cooperation, evaluate_oracle_file, oracle_path, run_distillation, run_experiment,
    seed_dir, DistillSummary, FinalMetric, FingerprintCheck, RunOutput, Summary, ZSweepPoint,
    CONFIG_FILE, METRICS_FILE, PARTIAL_METRICS_FILE, PLOTS_FILE, SUMMARY_FILE,
};
