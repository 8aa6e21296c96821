//! Cascade report over a finished (or partial) manifest, plus optional
//! corpus metrics on gateway embeddings.

use std::path::Path;

use forge_core::io::decode_rgba_png;
use forge_core::metrics::{frechet_distance, inception_score};
use forge_core::qc_filters::{FilterReport, QcConfig};
use forge_core::RasterImage;
use forge_gateway::{EmbedSpace, Gateway};
use serde::{Deserialize, Serialize};

use crate::build::StageCounts;
use crate::error::{IoContext, PipelineError, Result};
use crate::manifest::{read_manifest, Manifest, SourceStatus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub sources: u64,
    pub failed: u64,
    pub counts: StageCounts,
}

impl StatsReport {
    pub fn from_manifest(m: &Manifest, qc: &QcConfig) -> Self {
        let mut counts = StageCounts::default();
        let (mut sources, mut failed) = (0, 0);
        for s in m.sources() {
            sources += 1;
            failed += (s.status == SourceStatus::Failed) as u64;
            counts.add(s);
        }
        counts.cascade.get_or_insert_with(|| FilterReport::empty(qc));
        Self { sources, failed, counts }
    }

    pub fn cascade(&self) -> &FilterReport {
        self.counts.cascade.as_ref().expect("always set by from_manifest")
    }

    pub fn render(&self) -> String {
        let c = &self.counts;
        let mut out = format!("sources: {} ({} failed)\n", self.sources, self.failed);
        out.push_str(&format!("segmented candidates: {}\nafter NMS: {}\n\n", c.segmented, c.after_nms));
        out.push_str(&self.cascade().render_table());
        out.push_str(&format!("\ninpainting gate kept: {}\nrecords: {}\n", c.after_ssim, c.records));
        out
    }
}

/// A missing manifest yields the all-zero report.
pub fn stats(manifest_path: &Path, qc: &QcConfig) -> Result<StatsReport> {
    let m = match read_manifest(manifest_path) {
        Ok(m) => m,
        Err(PipelineError::NoManifest(_)) => Manifest::default(),
        Err(e) => return Err(e),
    };
    Ok(StatsReport::from_manifest(&m, qc))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetrics {
    pub kept: usize,
    pub raw: usize,
    pub inception_score_kept: Option<f64>,
    pub inception_score_raw: Option<f64>,
    /// Distance between kept foregrounds and all post-NMS candidate crops.
    pub fid_kept_vs_raw: Option<f64>,
}

fn load_rgb(path: &Path) -> Result<RasterImage> {
    let bytes = std::fs::read(path).at(path)?;
    Ok(decode_rgba_png(&bytes)?.0)
}

/// Inception-style metrics on kept foregrounds versus raw candidate crops.
pub fn corpus_metrics(out_dir: &Path, m: &Manifest, gateway: &dyn Gateway) -> Result<CorpusMetrics> {
    let kept: Vec<RasterImage> = m.tetrads().map(|t| load_rgb(&out_dir.join(&t.record.fg))).collect::<Result<_>>()?;
    let raw: Vec<RasterImage> = m
        .sources()
        .flat_map(|s| s.candidates.iter().filter_map(|c| c.crop.as_ref()))
        .map(|rel| load_rgb(&out_dir.join(rel)))
        .collect::<Result<_>>()?;
    let space = EmbedSpace::MetricInceptionLogits;
    let ek = gateway.embed_batch(&kept, space)?;
    let er = gateway.embed_batch(&raw, space)?;
    let is = |rows: &[Vec<f64>]| if rows.is_empty() { Ok(None) } else { inception_score(rows).map(Some) };
    let fid = if ek.len() >= 2 && er.len() >= 2 { Some(frechet_distance(&ek, &er)?) } else { None };
    Ok(CorpusMetrics {
        kept: ek.len(),
        raw: er.len(),
        inception_score_kept: is(&ek)?,
        inception_score_raw: is(&er)?,
        fid_kept_vs_raw: fid,
    })
}
