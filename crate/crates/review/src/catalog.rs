use std::path::{Path, PathBuf};

use forge_core::qc_filters::FilterVerdict;
use serde::{Deserialize, Serialize};

use crate::{Result, ReviewError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: String,
    pub source_id: String,
    /// Source image file name, for full-context viewing.
    pub source_image: String,
    /// Crop path relative to the catalog root.
    pub crop: String,
    pub verdicts: Vec<FilterVerdict>,
}

impl ReviewItem {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }
}

/// Items sorted by id; never modified by the server.
#[derive(Clone, Debug)]
pub struct Catalog {
    root: PathBuf,
    items: Vec<ReviewItem>,
}

impl Catalog {
    pub fn new(root: impl Into<PathBuf>, mut items: Vec<ReviewItem>) -> Self {
        items.sort_by(|a, b| a.id.cmp(&b.id));
        items.dedup_by(|a, b| a.id == b.id);
        Self { root: root.into(), items }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn items(&self) -> &[ReviewItem] {
        &self.items
    }

    pub fn get(&self, id: &str) -> Option<&ReviewItem> {
        self.items.binary_search_by(|i| i.id.as_str().cmp(id)).ok().map(|k| &self.items[k])
    }

    pub fn crop_bytes(&self, id: &str) -> Result<Vec<u8>> {
        let item = self.get(id).ok_or_else(|| ReviewError::UnknownId(id.into()))?;
        let path = self.root.join(&item.crop);
        std::fs::read(&path).map_err(|source| ReviewError::Io { path, source })
    }
}
