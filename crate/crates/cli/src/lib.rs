//! Batch driver for the Stokes solver experiments: TOML configuration,
//! cartesian sweeps, CSV convergence histories and JSON reports.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod output;
pub mod presets;
pub mod runner;

pub use config::{ExperimentConfig, Mode};
pub use error::{CliError, CliResult};
