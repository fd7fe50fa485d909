//! The experiment runner behind the command-line tool: configuration,
//! the normalize → reformulate pipeline, training and evaluation runs,
//! dataset statistics and the difficult-examples table.

pub mod config;
pub mod difficult;
pub mod pipeline;
pub mod runner;
pub mod stats;

pub use config::ExperimentConfig;
pub use difficult::{difficult_report, load_difficult_report, DifficultReport};
pub use pipeline::{Pipeline, Prepared};
pub use runner::{
    run_compare, run_difficult, run_evaluate, run_experiment, run_grid, run_normalize, run_reformulate, run_stats,
    run_train, Outcome, SNAPSHOT,
};
pub use stats::{dataset_stats, stats_table, DatasetStats};
