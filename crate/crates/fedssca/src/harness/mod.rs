//! Experiment plumbing: dataset ingestion, config files, presets, CSV/JSON
//! emission, and the command-line entry point.

pub mod cli;
pub mod config;
pub mod data;
pub mod report;

pub use cli::run_cli;
pub use config::{DataSpec, ExperimentSpec, Mode};
pub use data::{gen_synthetic, load_idx, split_train_test, SyntheticSpec};
