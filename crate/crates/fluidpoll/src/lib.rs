//! Configuration files, output formats and the command-line workflows
//! around `fluidpoll-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use commands::{cmd_optimize, cmd_pe, cmd_simulate, cmd_sweep, Outcome};
pub use config::ExperimentConfig;
pub use error::CliError;
