//! Command line and HTTP front ends of the `geofeat` pipeline.
//!
//! Exit codes: 0 success, 2 configuration error, 3 input error, 4 resumable
//! runtime failure (rerun with `--resume`).

pub mod cli;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod render;
pub mod service;

pub use error::{CliError, CliResult};
