//! Config parsing and subcommands behind the `nestbox` binary.

pub mod commands;
pub mod config;

pub use commands::{CliError, CliResult, Exit};
pub use config::{parse_assignment, parse_pairs, BlobConfig, ConfigError, DatasetKind, RunConfig, KEYS};
