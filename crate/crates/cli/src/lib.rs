//! Library side of the `eminp` command: CSV loading, run configuration,
//! report assembly and rendering.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod report;

pub use error::{CliError, DataError};
