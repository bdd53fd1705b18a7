//! Pipeline orchestration: generate, extract, rank, train, fuse, evaluate
//! and report, driven by a versioned TOML run configuration.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod plot;
pub mod report;
pub mod stamp;

pub use config::{Overrides, RunConfig, CONFIG_SCHEMA};
pub use error::{Error, Result};
pub use pipeline::{Pipeline, Stage};
