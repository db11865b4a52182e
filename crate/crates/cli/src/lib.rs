//! Command-line pipeline around the `msdan` library: corpus download, epoch
//! caching, training, evaluation, single-recording staging and figures.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for data errors,
//! 4 for runtime failures.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fetch;
pub mod pipeline;
pub mod predict;
pub mod svg;

pub use cli::run;
pub use error::{CliError, ErrorKind};
