//! Experiment runner over `dpolab-core`: one subcommand per study, each writing plot-ready CSVs,
//! a JSON report and a hashed manifest into its output directory.

pub mod app;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod report;

pub use app::{execute, main_with_args, Outcome};
pub use config::{ExperimentConfig, Subcommand};
pub use error::{CliError, Result};
pub use report::{Check, ExperimentReport};
