//! Experiment harness: configuration, the runner, and report generation.

pub mod config;
pub mod jsd;
pub mod metrics;
pub mod run;

pub use config::{AgentKind, ExperimentConfig, MdftConfig};
pub use jsd::js_divergence;
pub use metrics::{
    crossover_index, moving_average, usage_series, write_reports, AgentSummary, MetricsReport,
    MetricsRow, Summary,
};
pub use run::{
    derive_seed, generate_grids, grid_id, prepare_grids, run_agent, run_experiment,
    run_experiment_on, train_tables, ExperimentOutput, GridArtifacts,
};
