//! Scenario files, presets and subcommand implementations for the
//! `gridstab` command-line tool.

pub mod checks;
pub mod commands;
pub mod config;
pub mod output;
pub mod presets;

pub use config::ScenarioConfig;
