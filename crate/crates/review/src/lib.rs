//! Review of foreground candidates: a read-only catalog of crops with their
//! rule-filter verdicts, an append-only label log with a last-write-wins
//! index, and the HTTP API over both.

mod catalog;
pub mod server;
mod store;

pub use catalog::{Catalog, ReviewItem};
pub use store::{ExportLine, Label, LabelEvent, LabelStore};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("unknown id {0:?}")]
    UnknownId(String),
    #[error("no labels to export")]
    EmptyStore,
    #[error("corrupt label log {path}:{line}: {reason}")]
    CorruptLog { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T, E = ReviewError> = std::result::Result<T, E>;
