//! Command-line driver: configuration, subcommands and report writing.

pub mod commands;
pub mod config;
mod error;

pub use commands::{Ablation, Context, Outcome};
pub use config::{OodKind, RunConfig, Settings};
pub use error::{CliError, CliResult};
