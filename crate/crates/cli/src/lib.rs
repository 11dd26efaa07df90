//! Harness around the simulation core: configuration, file formats, corpus
//! construction, experiment tables, reports, and plots.

pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod plot;
pub mod recipes;
pub mod report;

pub use error::{CliError, CliResult};
