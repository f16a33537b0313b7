//! Command-line front end: configuration, pipeline stages and subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use commands::{execute, Cli};
pub use config::{EmbedderKind, PipelineConfig};
pub use error::CliError;
pub use pipeline::{run_pipeline, ClusteringFile, RunMetadata, RunSummary};
