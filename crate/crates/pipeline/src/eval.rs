//! Paired evaluation of a generated image set against a reference set.
//!
//! Either set is described by a JSON-lines file: tetrad manifests (the
//! ground-truth image, mask and prompt are used) or plain lines of the form
//! `{"id", "image", "mask"?, "box"?}` with paths relative to the file.

use std::collections::BTreeMap;
use std::path::Path;

use forge_core::io::read_image;
use forge_core::metrics::{clip_score, frechet_distance, inception_score, mask_eval, mse};
use forge_core::{mask_bbox, BBox, BinaryMask, PositionPrompt, RasterImage};
use forge_gateway::{EmbedSpace, Gateway};
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, PipelineError, Result};
use crate::manifest::ManifestLine;

#[derive(Clone, Debug)]
pub struct EvalItem {
    pub id: String,
    pub image: RasterImage,
    pub mask: Option<BinaryMask>,
    /// Prompt box for the edited region, when known.
    pub region: Option<BBox>,
}

#[derive(Deserialize)]
struct PlainLine {
    id: String,
    image: String,
    #[serde(default)]
    mask: Option<BinaryMask>,
    #[serde(default, rename = "box")]
    region: Option<BBox>,
}

/// Crop used for the edited-region similarity score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RegionCrop {
    #[default]
    PromptBox,
    MaskTight,
}

pub fn load_set(path: &Path) -> Result<Vec<EvalItem>> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(path).at(path)?;
    let mut items = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |reason: String| PipelineError::CorruptManifest { path: path.into(), line: n + 1, reason };
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        match value.get("type").and_then(|t| t.as_str()) {
            Some("tetrad") => {
                let ManifestLine::Tetrad(t) = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))? else {
                    unreachable!("tagged tetrad")
                };
                let r = t.record;
                let region = match &r.prompt {
                    PositionPrompt::Box { bbox } => Some(*bbox),
                    _ => mask_bbox(&r.mask).ok(),
                };
                items.push(EvalItem { id: r.id, image: read_image(&dir.join(&r.gt))?, mask: Some(r.mask), region });
            }
            Some(_) => continue,
            None => {
                let p: PlainLine = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
                items.push(EvalItem { id: p.id, image: read_image(&dir.join(&p.image))?, mask: p.mask, region: p.region });
            }
        }
    }
    Ok(items)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: usize,
    pub unmatched: usize,
    pub mse: Option<f64>,
    pub mask_iou: Option<f64>,
    pub clip_score: Option<f64>,
    pub fid: Option<f64>,
    pub inception_score: Option<f64>,
}

impl EvalReport {
    pub fn render(&self) -> String {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let mut out = format!("{:<18} {:>12}\n", "Metric", "Value");
        for (name, v) in [
            ("pairs", Some(self.pairs as f64)),
            ("unmatched", Some(self.unmatched as f64)),
            ("MSE", self.mse),
            ("mask IoU", self.mask_iou),
            ("CLIP score", self.clip_score),
            ("FID", self.fid),
            ("IS", self.inception_score),
        ] {
            out.push_str(&format!("{name:<18} {:>12}\n", f(v)));
        }
        out
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Pairs items by id; unmatched ids on either side are counted, not scored.
pub fn evaluate(generated: &[EvalItem], reference: &[EvalItem], gateway: &dyn Gateway, crop: RegionCrop) -> Result<EvalReport> {
    let refs: BTreeMap<&str, &EvalItem> = reference.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut pairs = Vec::new();
    for g in generated {
        if let Some(r) = refs.get(g.id.as_str()) {
            pairs.push((g, *r));
        }
    }
    let unmatched = generated.len() + reference.len() - 2 * pairs.len();

    let mut mses = Vec::new();
    let mut ious = Vec::new();
    let mut clips = Vec::new();
    for (g, r) in &pairs {
        mses.push(mse(&g.image, &r.image)?);
        if let (Some(gm), Some(rm)) = (&g.mask, &r.mask) {
            ious.push(mask_eval(gm, rm)?);
        }
        let region = match crop {
            RegionCrop::PromptBox => r.region.or_else(|| r.mask.as_ref().and_then(|m| mask_bbox(m).ok())),
            RegionCrop::MaskTight => r.mask.as_ref().and_then(|m| mask_bbox(m).ok()).or(r.region),
        };
        if let Some(b) = region {
            let eg = gateway.embed(&g.image.crop(&b)?, EmbedSpace::MetricClip)?;
            let er = gateway.embed(&r.image.crop(&b)?, EmbedSpace::MetricClip)?;
            clips.push(clip_score(&eg, &er)?);
        }
    }

    let space = EmbedSpace::MetricInceptionLogits;
    let gi: Vec<RasterImage> = pairs.iter().map(|(g, _)| g.image.clone()).collect();
    let ri: Vec<RasterImage> = pairs.iter().map(|(_, r)| r.image.clone()).collect();
    let eg = gateway.embed_batch(&gi, space)?;
    let fid = if pairs.len() >= 2 { Some(frechet_distance(&eg, &gateway.embed_batch(&ri, space)?)?) } else { None };
    let is = if eg.is_empty() { None } else { Some(inception_score(&eg)?) };

    Ok(EvalReport {
        pairs: pairs.len(),
        unmatched,
        mse: mean(&mses),
        mask_iou: mean(&ious),
        clip_score: mean(&clips),
        fid,
        inception_score: is,
    })
}
