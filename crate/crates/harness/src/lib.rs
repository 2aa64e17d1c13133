//! Pipelines, file formats and the cost-accuracy experiment around
//! `mrdino-core`.

pub mod commands;
pub mod config;
pub mod files;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use pipeline::{Experiment, Split};
