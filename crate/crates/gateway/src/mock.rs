use std::collections::BTreeMap;

use forge_core::io::decode_image;
use forge_core::mask_ops::dilate;
use forge_core::{BinaryMask, MaskCandidate, RasterImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::{check_inpaint_request, EmbedSpace, Gateway, GatewayError, Result};

/// Fixture whose foreground score is pinned to 0.95.
pub const GOOD_DOG_PNG: &[u8] = include_bytes!("../fixtures/good_dog.png");
const GOOD_DOG_SCORE: f64 = 0.95;

/// Segments smaller than this many pixels are not reported.
const MIN_SEGMENT_AREA: u64 = 16;
const RING_WIDTH: u32 = 5;

/// Deterministic stand-in for the inference services.
///
/// * segment: the most frequent colour is background; remaining pixels are
///   grouped by their red sample (the gray value for 1-channel images). Each
///   group of at least 16 pixels becomes one candidate, largest first, scored
///   0.9, 0.8, ... down to a floor of 0.1.
/// * inpaint: the hole takes the per-channel mean of the 5-pixel ring around
///   the mask (128 when the ring is empty).
/// * score_foreground: pinned value if the content is in the pin table,
///   otherwise a hash of the content mapped into [0, 1].
/// * embed: standard-normal vector seeded by a hash of space and content.
#[derive(Clone, Debug)]
pub struct MockGateway {
    pins: BTreeMap<String, f64>,
}

impl Default for MockGateway {
    fn default() -> Self {
        let mut gw = MockGateway { pins: BTreeMap::new() };
        let dog = decode_image(GOOD_DOG_PNG).expect("embedded fixture decodes");
        gw.pin_score(&dog, GOOD_DOG_SCORE);
        gw
    }
}

impl MockGateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pin_score(&mut self, crop: &RasterImage, score: f64) {
        self.pins.insert(content_key(crop), score);
    }

    /// Score the mock would give `crop` ignoring the pin table.
    pub fn hashed_score(crop: &RasterImage) -> f64 {
        let d = digest(b"score", crop);
        let v = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
        (v >> 11) as f64 / ((1u64 << 53) - 1) as f64
    }
}

fn digest(tag: &[u8], image: &RasterImage) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(tag);
    h.update(image.width().to_le_bytes());
    h.update(image.height().to_le_bytes());
    h.update([image.channels()]);
    h.update(image.pixels());
    h.finalize().into()
}

/// Hex digest identifying an image by dims, channel count and samples.
pub fn content_key(image: &RasterImage) -> String {
    digest(b"content", image).iter().map(|b| format!("{b:02x}")).collect()
}

fn colour(image: &RasterImage, i: usize) -> [u8; 3] {
    let c = image.channels() as usize;
    let p = &image.pixels()[i * c..i * c + c];
    if c == 1 {
        [p[0]; 3]
    } else {
        [p[0], p[1], p[2]]
    }
}

impl Gateway for MockGateway {
    fn segment(&self, image: &RasterImage, source_id: &str) -> Result<Vec<MaskCandidate>> {
        let n = image.pixel_count();
        let mut freq: BTreeMap<[u8; 3], u64> = BTreeMap::new();
        for i in 0..n {
            *freq.entry(colour(image, i)).or_default() += 1;
        }
        // ties go to the smallest colour: BTreeMap iterates ascending and
        // max_by_key keeps the last maximum, so reverse first
        let background = freq.iter().rev().max_by_key(|(_, &c)| c).map(|(&k, _)| k).unwrap_or([0; 3]);

        let mut groups: BTreeMap<u8, Vec<bool>> = BTreeMap::new();
        for i in 0..n {
            let c = colour(image, i);
            if c != background {
                groups.entry(c[0]).or_insert_with(|| vec![false; n])[i] = true;
            }
        }
        let mut masks: Vec<(u8, BinaryMask)> = groups
            .into_iter()
            .map(|(label, bits)| Ok((label, BinaryMask::new(image.width(), image.height(), bits)?)))
            .collect::<Result<Vec<_>, forge_core::Error>>()?;
        masks.retain(|(_, m)| m.area() >= MIN_SEGMENT_AREA);
        // stable: equal areas stay in label order
        masks.sort_by_key(|m| std::cmp::Reverse(m.1.area()));
        masks
            .into_iter()
            .enumerate()
            .map(|(k, (_, m))| {
                let score = (9 - k.min(8) as i32) as f64 / 10.0;
                Ok(MaskCandidate::new(m, score, source_id)?)
            })
            .collect()
    }

    fn inpaint(&self, image: &RasterImage, mask: &BinaryMask) -> Result<RasterImage> {
        check_inpaint_request(image, mask)?;
        let grown = dilate(mask, RING_WIDTH);
        let c = image.channels() as usize;
        let mut sums = vec![0u64; c];
        let mut count = 0u64;
        for (x, y) in grown.set_pixels() {
            if !mask.get(x, y) {
                for (s, &v) in sums.iter_mut().zip(image.pixel(x, y)) {
                    *s += v as u64;
                }
                count += 1;
            }
        }
        let fill: Vec<u8> = if count == 0 {
            vec![128; c]
        } else {
            sums.iter().map(|&s| ((s as f64) / count as f64).round() as u8).collect()
        };
        let mut out = image.clone();
        for (x, y) in mask.set_pixels() {
            out.set_pixel(x, y, &fill);
        }
        Ok(out)
    }

    fn score_foreground(&self, crop: &RasterImage) -> Result<f64> {
        if crop.pixel_count() == 0 {
            return Err(GatewayError::InvalidRequest("empty crop".into()));
        }
        Ok(self.pins.get(&content_key(crop)).copied().unwrap_or_else(|| Self::hashed_score(crop)))
    }

    fn embed(&self, image: &RasterImage, space: EmbedSpace) -> Result<Vec<f64>> {
        let seed = digest(space.as_str().as_bytes(), image);
        let mut rng = ChaCha8Rng::from_seed(seed);
        Ok((0..space.dim()).map(|_| StandardNormal.sample(&mut rng)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use forge_core::BBox;

    #[test]
    fn two_painted_rectangles() {
        let mut img = RasterImage::filled(40, 30, &[10, 200, 10]).unwrap();
        for y in 2..12 {
            for x in 3..20 {
                img.set_pixel(x, y, &[200, 0, 0]);
            }
        }
        for y in 15..25 {
            for x in 22..30 {
                img.set_pixel(x, y, &[90, 90, 250]);
            }
        }
        let c = MockGateway::new().segment(&img, "s").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].mask, BinaryMask::from_rect(40, 30, &BBox { x0: 3, y0: 2, x1: 20, y1: 12 }));
        assert_eq!(c[1].mask, BinaryMask::from_rect(40, 30, &BBox { x0: 22, y0: 15, x1: 30, y1: 25 }));
        assert_eq!((c[0].score, c[1].score), (0.9, 0.8));
        assert!(c.iter().all(|m| m.source_id == "s"));
    }

    #[test]
    fn tiny_regions_are_dropped_and_scores_floor() {
        let mut img = RasterImage::filled(60, 60, &[0]).unwrap();
        for k in 0..10u32 {
            for y in 0..5 {
                for x in 0..(5 + k) {
                    img.set_pixel(x, 6 * k + y, &[(k + 1) as u8 * 10]);
                }
            }
        }
        img.set_pixel(59, 59, &[250]);
        let c = MockGateway::new().segment(&img, "g").unwrap();
        assert_eq!(c.len(), 10);
        assert_eq!(c[0].mask.area(), 70);
        assert_eq!(c[8].score, 0.1);
        assert_eq!(c[9].score, 0.1);
    }

    #[test]
    fn blank_image_has_no_segments() {
        let img = RasterImage::filled(10, 10, &[5, 5, 5]).unwrap();
        assert!(MockGateway::new().segment(&img, "b").unwrap().is_empty());
    }

    #[test]
    fn ring_mean_fill() {
        let img = RasterImage::from_fn(30, 30, 3, |x, y, c| ((x * 7 + y * 3 + c as u32 * 50) % 256) as u8).unwrap();
        let mask = BinaryMask::from_rect(30, 30, &BBox { x0: 10, y0: 12, x1: 16, y1: 18 });
        let out = MockGateway::new().inpaint(&img, &mask).unwrap();
        // oracle: ring by explicit disc distance to the nearest mask pixel
        let mut sums = [0f64; 3];
        let mut n = 0.0;
        for y in 0..30i64 {
            for x in 0..30i64 {
                if mask.get(x as u32, y as u32) {
                    continue;
                }
                let near = mask.set_pixels().any(|(mx, my)| (mx as i64 - x).pow(2) + (my as i64 - y).pow(2) <= 25);
                if near {
                    for c in 0..3 {
                        sums[c] += img.sample(x as u32, y as u32, c as u8) as f64;
                    }
                    n += 1.0;
                }
            }
        }
        let expect: Vec<u8> = sums.iter().map(|s| (s / n).round() as u8).collect();
        for (x, y) in mask.set_pixels() {
            assert_eq!(out.pixel(x, y), &expect[..]);
        }
        for y in 0..30 {
            for x in 0..30 {
                if !mask.get(x, y) {
                    assert_eq!(out.pixel(x, y), img.pixel(x, y));
                }
            }
        }
    }

    #[test]
    fn empty_mask_inpaint_is_identity() {
        let img = RasterImage::from_fn(8, 8, 1, |x, y, _| (x * y) as u8).unwrap();
        assert_eq!(MockGateway::new().inpaint(&img, &BinaryMask::empty(8, 8)).unwrap(), img);
    }

    #[test]
    fn inpaint_dims_mismatch_rejected() {
        let img = RasterImage::filled(8, 8, &[1]).unwrap();
        let err = MockGateway::new().inpaint(&img, &BinaryMask::empty(8, 9)).unwrap_err();
        assert!(matches!(err, GatewayError::InvalidRequest(_)));
    }

    #[test]
    fn scores_are_stable_and_pinned() {
        let gw = MockGateway::new();
        let crop = RasterImage::from_fn(9, 9, 3, |x, y, c| (x + y + c as u32) as u8).unwrap();
        let s = gw.score_foreground(&crop).unwrap();
        assert_eq!(s, gw.score_foreground(&crop.clone()).unwrap());
        assert!((0.0..=1.0).contains(&s));
        let dog = decode_image(GOOD_DOG_PNG).unwrap();
        assert_eq!(gw.score_foreground(&dog).unwrap(), 0.95);
    }

    #[test]
    fn embeddings_are_input_deterministic() {
        let gw = MockGateway::new();
        let a = RasterImage::filled(4, 4, &[1, 2, 3]).unwrap();
        let b = RasterImage::filled(4, 4, &[1, 2, 4]).unwrap();
        for space in EmbedSpace::ALL {
            let va = gw.embed(&a, space).unwrap();
            assert_eq!(va.len(), space.dim());
            assert_eq!(va, gw.embed(&a, space).unwrap());
            assert_ne!(va, gw.embed(&b, space).unwrap());
        }
        let batch = gw.embed_batch(&[a.clone(), b.clone(), a.clone()], EmbedSpace::MetricClip).unwrap();
        assert_eq!(batch.len(), 3);
        assert_eq!(batch[0], batch[2]);
        assert_eq!(batch[1], gw.embed(&b, EmbedSpace::MetricClip).unwrap());
    }
}
