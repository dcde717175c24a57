//! Files, reports and subcommands around `patchscope-core`.
//!
//! * [`container`]: binary weight container (`NNWC`) and its text manifest.
//! * [`pnm`]: 8-bit P6/P5 images.
//! * [`dataset`]: on-disk labelled image directories.
//! * [`report`]: score dumps, ranked listings, annotated images and
//!   evaluation tables.
//! * [`commands`]: the `train`, `explain` and `evaluate` subcommands.

pub mod commands;
pub mod container;
pub mod dataset;
pub mod error;
pub mod pnm;
pub mod report;

pub use error::{Error, Result};

use std::path::Path;

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
