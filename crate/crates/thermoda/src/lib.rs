//! File formats, experiment orchestration and the `thermoda` command line
//! for transfer learning of building forecasters.
//!
//! The numerical work lives in [`thermoda_core`]. This crate loads CSV
//! data, stores checkpoints, runs the pretrain / adapt / scratch workflows
//! and writes their reports.

pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod io;
pub mod pipeline;

pub use checkpoint::{Checkpoint, CheckpointError, Provenance};
pub use config::{DatasetConfig, RunConfig};
pub use error::{Error, Result};
pub use io::{load_csv, Schema};
pub use pipeline::{adapt, compare, evaluate, pretrain, scratch, Comparison, ExperimentSpec};
