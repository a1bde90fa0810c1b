//! Command-line front end: run configuration, artifact lineage, pipeline
//! subcommands and the annotation server.

pub mod artifact;
pub mod backends;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod serve;
