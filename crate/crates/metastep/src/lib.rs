//! Experiment runner for learned step-size control: configuration, run
//! directories with manifests, CSV outputs and the pipeline stages behind
//! the `metastep` command.

pub mod config;
pub mod csvio;
pub mod exec;
pub mod manifest;
pub mod report;
pub mod run;

pub use config::{resolve, BaselineKind, ExperimentConfig, Overrides, Profile};
pub use exec::Pool;
