//! Experiment driver for the `codex` binary: configuration, artifact I/O and
//! the subcommand pipelines.

pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::Failure;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
