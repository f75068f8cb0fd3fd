//! Command-line frontend for the noisy-mpo experiments: config parsing, child
//! run expansion with derived seeds, and CSV/JSON output.

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, ConfigError, Mode, Overrides, RunConfig};
pub use run::{run, RunError};
