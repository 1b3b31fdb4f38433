//! Experiment configuration, metrics and the sweep runner.

pub mod config;
pub mod metrics;
pub mod run;

pub use config::{load_config, ExperimentConfig, Preset};
pub use metrics::{aggregate, mse, nmse};
pub use run::{
    aggregate_rows, averaged_estimate, ground_truth, metric_names, read_rows, report, run_experiment, write_report,
    AggregateRow, ExperimentSummary, Reference, ResultRow,
};
