//! Simulation harness behind the `mvdens` binary: experiment configs, the
//! replicated runner, and CSV output.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{ExperimentConfig, ExperimentKind, Method, PrPoint};
pub use output::{aggregate, render_csv, write_csv, AggregateRow, ResultRow};
pub use runner::{build_grid, run_experiment};
