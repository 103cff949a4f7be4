//! File formats, experiment configs and the batch runner for `shg-core`.

pub mod config;
pub mod dataset;
pub mod fgrid;
pub mod png;
pub mod run;

pub use config::{Config, ConfigError};
pub use run::{run, RunOptions, RunOutcome, RunReport};
