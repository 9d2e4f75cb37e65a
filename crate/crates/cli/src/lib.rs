//! Experiment runner for the momentppo algorithms.
//!
//! A TOML [`ExperimentConfig`] names an environment, a list of algorithm
//! variants and a list of seeds. [`run`] trains every combination, measures
//! the post-update return distribution of each final checkpoint and writes
//! plot-ready CSV/JSON artifacts plus a `manifest.json`; [`compare`] turns
//! manifests into a stability table and [`sweep_alignment`] tracks the
//! critic/return alignment across saved checkpoints.

use std::path::PathBuf;

pub mod compare;
pub mod config;
pub mod run;
pub mod sweep;

pub use compare::{compare, CompareRow};
pub use config::{ExperimentConfig, OUTPUT_DIR_ENV};
pub use run::{run, run_seed, RunManifest, SeedRecord, SeedStatus, StabilityRecord};
pub use sweep::{sweep_alignment, SweepReport};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] momentppo_core::Error),
}
