//! Position prompts: derivation from ground-truth masks, rasterization into
//! the unified 1-channel position map at latent resolution, and augmentation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{mask_bbox, BBox, BinaryMask, Params};
use crate::error::{Error, Result};
use crate::imageops::feather_mask;
use crate::mask_ops::dilate;

/// Spatial downsampling between image and latent grid.
pub const LATENT_FACTOR: u32 = 8;

/// Latent-grid dims for an image, never smaller than one cell.
pub fn latent_dims(width: u32, height: u32) -> (u32, u32) {
    ((width / LATENT_FACTOR).max(1), (height / LATENT_FACTOR).max(1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Point,
    Box,
    Mask,
    Null,
}

impl PromptKind {
    pub const ALL: [PromptKind; 4] = [PromptKind::Point, PromptKind::Box, PromptKind::Mask, PromptKind::Null];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PositionPrompt {
    Point { x: u32, y: u32 },
    Box { bbox: BBox },
    Mask {
        mask: BinaryMask,
        /// Gaussian feathering applied at rasterization; 0 keeps the map binary.
        #[serde(default)]
        feather_sigma: f64,
    },
    Null,
}

impl PositionPrompt {
    pub fn kind(&self) -> PromptKind {
        match self {
            PositionPrompt::Point { .. } => PromptKind::Point,
            PositionPrompt::Box { .. } => PromptKind::Box,
            PositionPrompt::Mask { .. } => PromptKind::Mask,
            PositionPrompt::Null => PromptKind::Null,
        }
    }

    pub fn validate(&self, (w, h): (u32, u32)) -> Result<()> {
        match self {
            PositionPrompt::Point { x, y } if *x >= w || *y >= h => {
                Err(Error::OutOfBounds(format!("point ({x},{y}) outside {w}x{h}")))
            }
            PositionPrompt::Box { bbox } if bbox.x1 > w || bbox.y1 > h || bbox.x0 >= bbox.x1 || bbox.y0 >= bbox.y1 => {
                Err(Error::OutOfBounds(format!("box {bbox:?} outside {w}x{h}")))
            }
            PositionPrompt::Mask { mask, .. } if mask.dims() != (w, h) => Err(Error::DimensionMismatch(format!(
                "prompt mask {:?} vs image {:?}",
                mask.dims(),
                (w, h)
            ))),
            _ => Ok(()),
        }
    }
}

/// Every prompt variant derivable from one ground-truth mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivedPrompts {
    pub point: PositionPrompt,
    pub bbox: PositionPrompt,
    pub mask: PositionPrompt,
    pub null: PositionPrompt,
}

impl DerivedPrompts {
    pub fn get(&self, kind: PromptKind) -> &PositionPrompt {
        match kind {
            PromptKind::Point => &self.point,
            PromptKind::Box => &self.bbox,
            PromptKind::Mask => &self.mask,
            PromptKind::Null => &self.null,
        }
    }
}

/// Rounded centroid of the set pixels.
pub fn mask_centroid(mask: &BinaryMask) -> Result<(u32, u32)> {
    let (mut sx, mut sy, mut n) = (0u64, 0u64, 0u64);
    for (x, y) in mask.set_pixels() {
        sx += x as u64;
        sy += y as u64;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let cx = (sx as f64 / n as f64).round() as u32;
    let cy = (sy as f64 / n as f64).round() as u32;
    Ok((cx.min(mask.width() - 1), cy.min(mask.height() - 1)))
}

pub fn derive_prompts(mask: &BinaryMask) -> Result<DerivedPrompts> {
    let (x, y) = mask_centroid(mask)?;
    let bbox = mask_bbox(mask)?;
    Ok(DerivedPrompts {
        point: PositionPrompt::Point { x, y },
        bbox: PositionPrompt::Box { bbox },
        mask: PositionPrompt::Mask { mask: mask.clone(), feather_sigma: 0.0 },
        null: PositionPrompt::Null,
    })
}

/// A uniformly chosen set pixel, as an alternative to the centroid point.
pub fn sample_interior_point<R: Rng + ?Sized>(mask: &BinaryMask, rng: &mut R) -> Result<PositionPrompt> {
    let area = mask.area();
    if area == 0 {
        return Err(Error::EmptyMask);
    }
    let k = rng.random_range(0..area) as usize;
    let (x, y) = mask.set_pixels().nth(k).expect("k < area");
    Ok(PositionPrompt::Point { x, y })
}

/// Single-channel map on the latent grid; every value lies in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct PositionMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
}

impl PositionMap {
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[(y * self.width + x) as usize]
    }

    /// First cell holding the maximum value, in raster order.
    pub fn argmax(&self) -> (u32, u32) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best as u32 % self.width, best as u32 / self.width)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.values.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }
}

/// Rasterize a prompt given in image pixel coordinates onto a `map_dims` grid.
///
/// Point prompts become an isotropic Gaussian with peak exactly 1 at the
/// cell containing the point and σ = 0.05·min(map W, H). Boxes mark every
/// cell whose footprint overlaps the box. Masks are sampled nearest-neighbour
/// (after optional feathering). Null maps are all ones.
pub fn rasterize(prompt: &PositionPrompt, image_dims: (u32, u32), map_dims: (u32, u32)) -> Result<PositionMap> {
    let (iw, ih) = image_dims;
    let (mw, mh) = map_dims;
    if iw == 0 || ih == 0 || mw == 0 || mh == 0 {
        return Err(Error::InvalidRange(format!("image {image_dims:?} / map {map_dims:?}")));
    }
    prompt.validate(image_dims)?;
    let n = (mw * mh) as usize;
    let values = match prompt {
        PositionPrompt::Null => vec![1.0f32; n],
        PositionPrompt::Point { x, y } => {
            let cx = (((*x as f64 + 0.5) * mw as f64 / iw as f64) as u32).min(mw - 1) as f64;
            let cy = (((*y as f64 + 0.5) * mh as f64 / ih as f64) as u32).min(mh - 1) as f64;
            let sigma = 0.05 * mw.min(mh) as f64;
            let denom = 2.0 * sigma * sigma;
            let mut v = Vec::with_capacity(n);
            for j in 0..mh {
                for i in 0..mw {
                    let d2 = (i as f64 - cx).powi(2) + (j as f64 - cy).powi(2);
                    v.push((-d2 / denom).exp() as f32);
                }
            }
            v
        }
        PositionPrompt::Box { bbox } => {
            let (iw, ih, mw64, mh64) = (iw as u64, ih as u64, mw as u64, mh as u64);
            let mut v = Vec::with_capacity(n);
            for j in 0..mh64 {
                let row_in = j * ih < bbox.y1 as u64 * mh64 && (j + 1) * ih > bbox.y0 as u64 * mh64;
                for i in 0..mw64 {
                    let col_in = i * iw < bbox.x1 as u64 * mw64 && (i + 1) * iw > bbox.x0 as u64 * mw64;
                    v.push(if row_in && col_in { 1.0 } else { 0.0 });
                }
            }
            v
        }
        PositionPrompt::Mask { mask, feather_sigma } => {
            let field = feather_mask(mask, *feather_sigma);
            let mut v = Vec::with_capacity(n);
            for j in 0..mh {
                let sy = (((j as f64 + 0.5) * ih as f64 / mh as f64) as u32).min(ih - 1);
                for i in 0..mw {
                    let sx = (((i as f64 + 0.5) * iw as f64 / mw as f64) as u32).min(iw - 1);
                    v.push(field[(sy * iw + sx) as usize] as f32);
                }
            }
            v
        }
    };
    Ok(PositionMap { width: mw, height: mh, values })
}

/// Magnitudes for prompt augmentation, as fractions of the relevant extent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptAugConfig {
    /// σ of the point jitter as a fraction of the shorter image side.
    pub point_jitter_frac: f64,
    /// Each box side moves outward by U[0, this]·(box extent).
    pub box_enlarge_max: f64,
    /// Mask dilation radius drawn from U[0, this]·(shorter side).
    pub mask_dilate_max: f64,
    /// Feathering σ drawn from U[0, this]·(shorter side).
    pub mask_feather_max: f64,
}

impl Default for PromptAugConfig {
    fn default() -> Self {
        Self { point_jitter_frac: 0.05, box_enlarge_max: 0.2, mask_dilate_max: 0.03, mask_feather_max: 0.02 }
    }
}

impl PromptAugConfig {
    pub fn identity() -> Self {
        Self { point_jitter_frac: 0.0, box_enlarge_max: 0.0, mask_dilate_max: 0.0, mask_feather_max: 0.0 }
    }
}

/// Randomly perturb a prompt; returns the new prompt and realized parameters.
pub fn augment_prompt<R: Rng + ?Sized>(
    prompt: &PositionPrompt,
    image_dims: (u32, u32),
    rng: &mut R,
    config: &PromptAugConfig,
) -> Result<(PositionPrompt, Params)> {
    prompt.validate(image_dims)?;
    let (w, h) = image_dims;
    let short = w.min(h) as f64;
    let mut params = Params::default();
    let out = match prompt {
        PositionPrompt::Null => PositionPrompt::Null,
        PositionPrompt::Point { x, y } => {
            let sigma = config.point_jitter_frac * short;
            if sigma <= 0.0 {
                prompt.clone()
            } else {
                let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidRange(e.to_string()))?;
                let dx = normal.sample(rng);
                let dy = normal.sample(rng);
                params.push("point_dx", dx);
                params.push("point_dy", dy);
                let nx = (*x as f64 + dx).round().clamp(0.0, (w - 1) as f64) as u32;
                let ny = (*y as f64 + dy).round().clamp(0.0, (h - 1) as f64) as u32;
                PositionPrompt::Point { x: nx, y: ny }
            }
        }
        PositionPrompt::Box { bbox } => {
            if config.box_enlarge_max <= 0.0 {
                prompt.clone()
            } else {
                let mut grow = [0.0f64; 4];
                for g in &mut grow {
                    *g = rng.random_range(0.0..=config.box_enlarge_max);
                }
                params.push("box_left", grow[0]);
                params.push("box_top", grow[1]);
                params.push("box_right", grow[2]);
                params.push("box_bottom", grow[3]);
                let bw = bbox.width() as f64;
                let bh = bbox.height() as f64;
                let x0 = (bbox.x0 as f64 - (grow[0] * bw).round()).max(0.0) as u32;
                let y0 = (bbox.y0 as f64 - (grow[1] * bh).round()).max(0.0) as u32;
                let x1 = (bbox.x1 as f64 + (grow[2] * bw).round()).min(w as f64) as u32;
                let y1 = (bbox.y1 as f64 + (grow[3] * bh).round()).min(h as f64) as u32;
                PositionPrompt::Box { bbox: BBox { x0, y0, x1, y1 } }
            }
        }
        PositionPrompt::Mask { mask, feather_sigma } => {
            let radius = if config.mask_dilate_max > 0.0 {
                (rng.random_range(0.0..=config.mask_dilate_max) * short).floor() as u32
            } else {
                0
            };
            let extra = if config.mask_feather_max > 0.0 {
                rng.random_range(0.0..=config.mask_feather_max) * short
            } else {
                0.0
            };
            if config.mask_dilate_max > 0.0 || config.mask_feather_max > 0.0 {
                params.push("mask_dilate_px", radius as f64);
                params.push("mask_feather_sigma", extra);
            }
            PositionPrompt::Mask { mask: dilate(mask, radius), feather_sigma: feather_sigma + extra }
        }
    };
    Ok((out, params))
}
