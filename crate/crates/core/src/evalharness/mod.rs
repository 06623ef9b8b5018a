//! Metrics, significance tests and experiment orchestration.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod significance;

pub use config::{DataSource, ExperimentConfig, Method, SignificanceUnit, CONFIG_KEYS};
pub use experiment::{
    load_dataset, log_sessions, persist, result_rows, run_experiment, run_experiment_observed, summarize,
    sweep_alpha, write_results_csv, write_sweep_csv, Aggregate, MethodRun, ResultRow, RunRecord, SeedLog,
    Summary, SweepPoint, ALPHA_GRID,
};
pub use metrics::{dcg_at_k, err_at_k, evaluate_policy, ndcg_at_k, Metric, MetricReport, QueryMetrics, Ranker, DEFAULT_KS};
pub use significance::{mean_std, paired_t_test};
