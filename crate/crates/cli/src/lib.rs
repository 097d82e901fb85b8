//! Library side of the `meanreflect` binary: config parsing, the `run`,
//! `sweep-penalty` and `verify` commands, and their output formats.

pub mod config;
pub mod error;
pub mod run;
pub mod sweep;
pub mod verify;

pub use config::ScenarioConfig;
pub use error::CliError;
