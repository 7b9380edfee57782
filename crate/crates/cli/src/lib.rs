//! Batch front-end for the space-time Trefftz DG Maxwell solver.

pub mod config;
pub mod dofs;
pub mod scenario;

/// Overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "TREFFTZ_OUTPUT_DIR";

pub use config::{parse_config, parse_config_file, RunConfig, Scenario};
pub use scenario::{run_scenario, CliError};
