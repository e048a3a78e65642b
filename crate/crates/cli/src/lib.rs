//! Config-driven runner for forgetting audits: loads a TOML experiment,
//! runs every sweep coordinate, and writes curves, scores and a summary.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig, Kind};
pub use report::{emit_summary, verdicts_from_curves, Verdict, VerdictOverride};
pub use runner::{resolve_output_dir, run_experiment, RunArtifact, OUTPUT_ROOT_ENV};
