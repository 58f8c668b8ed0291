//! CLI surface and data ingestion for the heviper retrieval engine.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod synth;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
