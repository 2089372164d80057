//! Config-driven experiment runner for the `kmconsensus` solver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{cmd_montecarlo, cmd_oracle, cmd_run, cmd_sweep, cmd_validate, Overrides};
pub use error::CliError;
