//! Core value types shared by every stage: raster images, binary masks, the
//! COCO-style RLE interchange form, boxes, scored mask candidates and the
//! tetrad training record.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::prompt::PositionPrompt;

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// An 8-bit, row-major, channel-interleaved image with 1 or 3 channels.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RasterImage({}x{}x{})", self.width, self.height, self.channels)
    }
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("zero-sized image {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("unsupported channel count {channels}")));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(Error::InvalidImage(format!(
                "expected {expected} samples, got {}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, channels, pixels })
    }

    /// A constant-colour image. `color` must have 1 or 3 entries.
    pub fn filled(width: u32, height: u32, color: &[u8]) -> Result<Self> {
        let channels = color.len() as u8;
        let n = width as usize * height as usize;
        let pixels = color.iter().copied().cycle().take(n * color.len()).collect();
        Self::new(width, height, channels, pixels)
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        channels: u8,
        mut f: impl FnMut(u32, u32, u8) -> u8,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * channels as usize);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    #[inline]
    pub fn sample(&self, x: u32, y: u32, c: u8) -> u8 {
        self.pixels[self.index(x, y) + c as usize]
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let i = self.index(x, y);
        &self.pixels[i..i + self.channels as usize]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, value: &[u8]) {
        let i = self.index(x, y);
        let c = self.channels as usize;
        self.pixels[i..i + c].copy_from_slice(&value[..c]);
    }

    /// Luma of pixel `i` (linear index) on the 0–255 scale.
    #[inline]
    pub fn luma_at(&self, i: usize) -> f64 {
        match self.channels {
            1 => self.pixels[i] as f64,
            _ => {
                let p = &self.pixels[i * 3..i * 3 + 3];
                LUMA_WEIGHTS[0] * p[0] as f64
                    + LUMA_WEIGHTS[1] * p[1] as f64
                    + LUMA_WEIGHTS[2] * p[2] as f64
            }
        }
    }

    /// Grayscale luma scaled to [0, 1], row-major.
    pub fn luma_unit(&self) -> Vec<f64> {
        (0..self.pixel_count()).map(|i| self.luma_at(i) / 255.0).collect()
    }

    /// Three-channel copy; grayscale is replicated.
    pub fn to_rgb(&self) -> RasterImage {
        if self.channels == 3 {
            return self.clone();
        }
        let pixels = self.pixels.iter().flat_map(|&v| [v, v, v]).collect();
        RasterImage { width: self.width, height: self.height, channels: 3, pixels }
    }

    /// Copy of the half-open region `bbox`.
    pub fn crop(&self, bbox: &BBox) -> Result<RasterImage> {
        if bbox.x1 > self.width || bbox.y1 > self.height {
            return Err(Error::OutOfBounds(format!(
                "crop {bbox:?} outside {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels as usize;
        let mut pixels = Vec::with_capacity(bbox.area() as usize * c);
        for y in bbox.y0..bbox.y1 {
            let start = self.index(bbox.x0, y);
            let end = start + (bbox.x1 - bbox.x0) as usize * c;
            pixels.extend_from_slice(&self.pixels[start..end]);
        }
        RasterImage::new(bbox.width(), bbox.height(), self.channels, pixels)
    }
}

/// One boolean per pixel, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryMask({}x{}, area {})", self.width, self.height, self.area())
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![true; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    /// Mask covering the half-open rectangle `bbox` (clipped to the mask).
    pub fn from_rect(width: u32, height: u32, bbox: &BBox) -> Self {
        Self::from_fn(width, height, |x, y| bbox.contains(x, y))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Iterator over the coordinates of set pixels in raster order.
    pub fn set_pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    pub fn crop(&self, bbox: &BBox) -> Result<BinaryMask> {
        if bbox.x1 > self.width || bbox.y1 > self.height {
            return Err(Error::OutOfBounds(format!(
                "crop {bbox:?} outside {}x{}",
                self.width, self.height
            )));
        }
        Ok(BinaryMask::from_fn(bbox.width(), bbox.height(), |x, y| {
            self.get(x + bbox.x0, y + bbox.y0)
        }))
    }

    pub fn check_same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "masks {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    pub fn check_image_dims(&self, image: &RasterImage) -> Result<()> {
        if self.dims() != image.dims() {
            return Err(Error::DimensionMismatch(format!(
                "mask {:?} vs image {:?}",
                self.dims(),
                image.dims()
            )));
        }
        Ok(())
    }
}

impl Serialize for BinaryMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        rle_encode(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BinaryMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rle = RleMask::deserialize(deserializer)?;
        rle_decode(&rle).map_err(serde::de::Error::custom)
    }
}

/// Uncompressed COCO run-length encoding: column-major, alternating runs
/// starting with a (possibly empty) run of zeros.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct RleWire {
    size: [u32; 2],
    counts: Vec<u32>,
}

impl Serialize for RleMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        RleWire { size: [self.height, self.width], counts: self.counts.clone() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RleMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = RleWire::deserialize(deserializer)?;
        Ok(RleMask { width: wire.size[1], height: wire.size[0], counts: wire.counts })
    }
}

impl RleMask {
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }
}

pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..w {
        for y in 0..h {
            let v = mask.bits[y * w + x];
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    RleMask { width: mask.width, height: mask.height, counts }
}

pub fn rle_decode(rle: &RleMask) -> Result<BinaryMask> {
    let expected = rle.width as u64 * rle.height as u64;
    let actual: u64 = rle.counts.iter().map(|&c| c as u64).sum();
    if actual != expected {
        return Err(Error::CountMismatch { expected, actual });
    }
    let (w, h) = (rle.width as usize, rle.height as usize);
    let mut bits = vec![false; w * h];
    let mut pos = 0usize;
    let mut value = false;
    for &count in &rle.counts {
        if value {
            for p in pos..pos + count as usize {
                // column-major position -> row-major index
                bits[(p % h) * w + p / h] = true;
            }
        }
        pos += count as usize;
        value = !value;
    }
    Ok(BinaryMask { width: rle.width, height: rle.height, bits })
}

/// Half-open pixel box `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidRange(format!("degenerate box ({x0},{y0},{x1},{y1})")));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    #[inline]
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }
}

/// Tightest half-open box around every set pixel.
pub fn mask_bbox(mask: &BinaryMask) -> Result<BBox> {
    let w = mask.width as usize;
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    for (row, bits) in mask.bits.chunks(w).enumerate() {
        let Some(first) = bits.iter().position(|&b| b) else { continue };
        let last = bits.iter().rposition(|&b| b).unwrap_or(first);
        let y = row as u32;
        y0 = y0.min(y);
        y1 = y;
        x0 = x0.min(first as u32);
        x1 = x1.max(last as u32);
    }
    if x0 == u32::MAX {
        return Err(Error::EmptyMask);
    }
    Ok(BBox { x0, y0, x1: x1 + 1, y1: y1 + 1 })
}

/// A scored segmentation mask tied to its source image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskCandidate {
    pub mask: BinaryMask,
    pub score: f64,
    pub source_id: String,
}

impl MaskCandidate {
    pub fn new(mask: BinaryMask, score: f64, source_id: impl Into<String>) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidRange(format!("candidate score {score} outside [0,1]")));
        }
        Ok(Self { mask, score, source_id: source_id.into() })
    }
}

/// Provenance carried with each tetrad.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TetradMeta {
    pub source_id: String,
    pub mask_index: usize,
    pub segment_score: f64,
    pub classifier_score: f64,
    pub relative_size: f64,
    pub aspect_ratio: f64,
    pub components: u32,
    pub color_std: f64,
    pub ssim: f64,
    pub dilate_radius: u32,
    pub split: String,
    /// Realized augmentation parameters, free-form but deterministic.
    pub augmentation: Params,
}

/// One (foreground, background, prompt, ground truth) training sample.
///
/// Images are referenced by relative path so the three rasters never share
/// storage. `mask` is the ground-truth insertion mask at `gt` resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TetradRecord {
    pub id: String,
    pub fg: String,
    pub bg: String,
    pub gt: String,
    pub gt_dims: (u32, u32),
    pub mask: BinaryMask,
    pub prompt: PositionPrompt,
    pub meta: TetradMeta,
}

impl TetradRecord {
    pub fn validate(&self) -> Result<()> {
        if self.mask.dims() != self.gt_dims {
            return Err(Error::DimensionMismatch(format!(
                "record {}: mask {:?} vs gt {:?}",
                self.id,
                self.mask.dims(),
                self.gt_dims
            )));
        }
        if self.fg == self.bg || self.fg == self.gt || self.bg == self.gt {
            return Err(Error::InvalidImage(format!("record {} reuses an image path", self.id)));
        }
        self.prompt.validate(self.gt_dims)
    }
}

/// Ordered name/value list recording realized augmentation parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Params(pub Vec<(String, f64)>);

impl Params {
    pub fn push(&mut self, key: impl Into<String>, value: f64) {
        self.0.push((key.into(), value));
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn extend(&mut self, other: Params) {
        self.0.extend(other.0);
    }
}
