//! Files, configuration and command-line layer for `tgd-core`: checkpoint
//! directories, stored datasets, image folders, run configs, metrics streams
//! and evaluation reports.
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod digest;
pub mod error;
pub mod folder;
pub mod metrics;
pub mod report;

pub use error::{Error, Result};
pub use tgd_core;
