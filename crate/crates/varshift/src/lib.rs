//! File formats and the command-line front end for `varshift-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod parallel;
pub mod report;
pub mod runner;
pub mod svg;

pub use error::{AppError, AppResult};
