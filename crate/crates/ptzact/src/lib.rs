//! File formats, run configuration and the `ptzact` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;

pub use error::CliError;
