//! File formats, the training driver and the command-line workbench
//! around [`tclap_core`].
//!
//! - [`manifest`] / [`clipfile`]: JSONL corpus manifests and `.tclp` clips
//! - [`checkpoint`]: `.tckp` checkpoints with byte-stable round trips
//! - [`metrics`]: the per-step loss log
//! - [`report`]: schema-versioned evaluation reports
//! - [`config`]: the TOML run configuration
//! - [`pipeline`]: synth, train (with resume), eval, gradcheck, repro

pub mod checkpoint;
pub mod clipfile;
pub mod config;
mod error;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
