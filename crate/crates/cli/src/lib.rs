//! Library side of the `flocknet` binary: configuration, file formats and
//! the command implementations, exposed so integration tests can drive the
//! exact code paths the binary runs.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use error::{CliError, Result};
