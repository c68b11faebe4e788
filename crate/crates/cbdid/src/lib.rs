//! Command-line front end for `cbdid-core`.
//!
//! - [`data`]: CSV ingestion.
//! - [`harness`]: parallel, reproducible Monte Carlo runs of the simulation tables.
//! - [`report`]: CSV, Markdown and JSON rendering.
//! - [`config`]: config files that mirror the flags.
//! - [`cli`]: the `estimate`, `select` and `simulate` subcommands.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod report;

pub use error::{Error, Result};
