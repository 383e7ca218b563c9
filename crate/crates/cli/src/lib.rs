//! Library side of the `loopperc` binary: config parsing, dispatch and
//! artifact writing.

pub mod config;
pub mod error;
pub mod run;

pub use config::{parse_config, ExperimentConfig};
pub use error::CliError;

/// Version string embedded in every artifact.
pub const VERSION: &str = concat!("loopperc ", env!("CARGO_PKG_VERSION"));
