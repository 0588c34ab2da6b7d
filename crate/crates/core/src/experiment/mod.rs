//! Run configuration, presets, the experiment runner and CSV output.

pub mod config;
pub mod presets;
pub mod runner;

pub use config::{DataSource, RunConfig};
pub use runner::{
    load_datasets, run_experiment, run_tradeoff_sweep, write_metrics_csv, write_sweep_csv,
    Datasets, ExperimentResult, RoundMetrics, SweepAxis, SweepPoint,
};
