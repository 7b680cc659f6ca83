//! File formats and subcommands of the `diarize` tool.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod manifest;
pub mod synth;
pub mod wav;

pub use config::RunConfig;
pub use error::CliError;
