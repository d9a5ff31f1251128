//! Library half of the `qno` command-line tool: configuration, output
//! formats, the sweep manifest and the subcommands themselves.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
