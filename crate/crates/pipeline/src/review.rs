//! Review catalog built from the candidates recorded in a run manifest.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};

use forge_review::server::AppState;
use forge_review::{Catalog, LabelStore, ReviewItem};

use crate::build::candidate_id;
use crate::error::{IoContext, Result};
use crate::manifest::{Manifest, MANIFEST_FILE};

pub const LABELS_FILE: &str = "labels.jsonl";

/// Every post-NMS candidate that has a crop on disk.
pub fn catalog(out_dir: &Path, manifest: &Manifest) -> Catalog {
    let items = manifest
        .sources()
        .flat_map(|s| {
            s.candidates.iter().filter_map(move |c| {
                c.crop.as_ref().map(|crop| ReviewItem {
                    id: candidate_id(&s.source_id, c.index),
                    source_id: s.source_id.clone(),
                    source_image: s.file.clone(),
                    crop: crop.clone(),
                    verdicts: c.verdicts.clone(),
                })
            })
        })
        .collect();
    Catalog::new(out_dir, items)
}

pub fn app_state(out_dir: &Path, token: Option<String>) -> Result<AppState> {
    let manifest = crate::manifest::read_manifest(&out_dir.join(MANIFEST_FILE))?;
    let store = LabelStore::open(&out_dir.join(LABELS_FILE))?;
    Ok(AppState { catalog: catalog(out_dir, &manifest), store: Mutex::new(store), token })
}

pub fn spawn_review(out_dir: &Path, addr: SocketAddr, token: Option<String>) -> Result<SocketAddr> {
    let state = app_state(out_dir, token)?;
    forge_review::server::spawn(addr, Arc::new(state)).at(out_dir)
}
