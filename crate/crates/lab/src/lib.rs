//! File formats, configuration, charts and the batch front-end for
//! `edl-core` experiments.

pub mod bank;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod outputs;
pub mod runner;
pub mod svg;

pub use config::RunConfig;
pub use error::{LabError, Result};
