//! Std companion to `mixlqc`: JSON configs, CSV artifacts, parallel
//! benchmarks and the command-line front end.

pub mod app;
pub mod config;
pub mod output;
pub mod runner;

pub use config::{parse_config, parse_config_str, to_canonical_json, ConfigError};
pub use runner::run_parallel;
