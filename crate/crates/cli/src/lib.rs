//! Experiment orchestration for GPR-aided localization: sequence directories,
//! experiment configs and the `gprloc` subcommands.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod pipeline;

pub use config::{ExperimentConfig, SimulationPlan};
pub use dataset::{read_sequence, write_sequence, Manifest, Sequence};
pub use error::{CliError, CliResult};
