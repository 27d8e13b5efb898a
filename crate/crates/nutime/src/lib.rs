//! File formats, checkpoints, run configuration and the command line around
//! `nutime-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod manifest;
pub mod records;
pub mod tsv;

pub use checkpoint::{Checkpoint, CheckpointKind, Metadata, Provenance};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use manifest::{load_dir, Dataset, DatasetManifest};
pub use tsv::{load_ucr_splits, load_ucr_tsv, write_ucr_tsv, LabelMap};
