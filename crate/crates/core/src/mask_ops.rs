//! Mask algebra used by filtering and evaluation.

use crate::corpus::{BinaryMask, MaskCandidate, RasterImage};
use crate::error::{Error, Result};

/// Intersection over union. Two empty masks have IoU 1.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same_dims(b)?;
    let (inter, union) = overlap_counts(a, b);
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

fn overlap_counts(a: &BinaryMask, b: &BinaryMask) -> (u64, u64) {
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as u64;
        union += (x || y) as u64;
    }
    (inter, union)
}

/// Suppression settings for [`nms_with`].
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NmsConfig {
    /// A candidate is dropped when its IoU with a kept mask is strictly above this.
    pub iou_threshold: f64,
    /// Optional sub-object suppression: drop when intersection over the
    /// smaller mask's area is strictly above this. Disabled by default.
    pub containment_threshold: Option<f64>,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.6, containment_threshold: None }
    }
}

/// Greedy NMS by descending score; ties keep the lower input index.
pub fn nms(candidates: &[MaskCandidate], iou_threshold: f64) -> Result<Vec<MaskCandidate>> {
    nms_with(candidates, &NmsConfig { iou_threshold, containment_threshold: None })
}

pub fn nms_with(candidates: &[MaskCandidate], config: &NmsConfig) -> Result<Vec<MaskCandidate>> {
    Ok(nms_indices(candidates, config)?.into_iter().map(|i| candidates[i].clone()).collect())
}

/// Indices of surviving candidates in output (score-descending) order.
pub fn nms_indices(candidates: &[MaskCandidate], config: &NmsConfig) -> Result<Vec<usize>> {
    if !(config.iou_threshold > 0.0 && config.iou_threshold <= 1.0) {
        return Err(Error::InvalidRange(format!("nms threshold {}", config.iou_threshold)));
    }
    if let Some(first) = candidates.first() {
        for c in &candidates[1..] {
            if c.source_id != first.source_id {
                return Err(Error::MixedSources(first.source_id.clone(), c.source_id.clone()));
            }
            first.mask.check_same_dims(&c.mask)?;
        }
    }

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    // stable sort keeps index order among equal scores
    order.sort_by(|&i, &j| candidates[j].score.total_cmp(&candidates[i].score));

    let areas: Vec<u64> = candidates.iter().map(|c| c.mask.area()).collect();
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept.iter().any(|&k| {
            let (inter, union) = overlap_counts(&candidates[i].mask, &candidates[k].mask);
            let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
            if iou > config.iou_threshold {
                return true;
            }
            match config.containment_threshold {
                Some(t) => {
                    let smaller = areas[i].min(areas[k]);
                    smaller > 0 && inter as f64 / smaller as f64 > t
                }
                None => false,
            }
        });
        if !suppressed {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Number of 8-connected foreground components (two-pass union-find labeling).
pub fn connected_components(mask: &BinaryMask) -> u32 {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let bits = mask.bits();
    let mut labels = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];

    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            parent[x as usize] = parent[parent[x as usize] as usize];
            x = parent[x as usize];
        }
        x
    }

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !bits[i] {
                continue;
            }
            // previously visited 8-neighbours: W, NW, N, NE
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            if x > 0 && labels[i - 1] != 0 {
                neighbours[n] = labels[i - 1];
                n += 1;
            }
            if y > 0 {
                let up = i - w;
                if x > 0 && labels[up - 1] != 0 {
                    neighbours[n] = labels[up - 1];
                    n += 1;
                }
                if labels[up] != 0 {
                    neighbours[n] = labels[up];
                    n += 1;
                }
                if x + 1 < w && labels[up + 1] != 0 {
                    neighbours[n] = labels[up + 1];
                    n += 1;
                }
            }
            if n == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                labels[i] = l;
                continue;
            }
            let mut root = find(&mut parent, neighbours[0]);
            for &other in &neighbours[1..n] {
                let r = find(&mut parent, other);
                if r != root {
                    let (lo, hi) = if r < root { (r, root) } else { (root, r) };
                    parent[hi as usize] = lo;
                    root = lo;
                }
            }
            labels[i] = root;
        }
    }

    (1..parent.len() as u32).filter(|&l| find(&mut parent, l) == l).count() as u32
}

/// Morphological dilation with a disc of the given radius (`dx²+dy² ≤ r²`).
pub fn dilate(mask: &BinaryMask, radius: u32) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let r = radius as i64;
    let bits = mask.bits();

    // per-row prefix counts so a horizontal window test is O(1)
    let mut prefix = vec![0u32; h * (w + 1)];
    for y in 0..h {
        let row = &mut prefix[y * (w + 1)..(y + 1) * (w + 1)];
        for x in 0..w {
            row[x + 1] = row[x] + bits[y * w + x] as u32;
        }
    }
    let half_widths: Vec<usize> = (-r..=r).map(|dy| ((r * r - dy * dy) as f64).sqrt() as usize).collect();

    let mut out = vec![false; w * h];
    for y in 0..h {
        for (k, dy) in (-r..=r).enumerate() {
            let sy = y as i64 + dy;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            let row = &prefix[sy as usize * (w + 1)..(sy as usize + 1) * (w + 1)];
            if row[w] == 0 {
                continue;
            }
            let hw = half_widths[k];
            for x in 0..w {
                let i = y * w + x;
                if out[i] {
                    continue;
                }
                let lo = x.saturating_sub(hw);
                let hi = (x + hw + 1).min(w);
                if row[hi] > row[lo] {
                    out[i] = true;
                }
            }
        }
    }
    BinaryMask::new(mask.width(), mask.height(), out).expect("same dims")
}

/// Population standard deviation of luma (0–255) over the masked pixels.
pub fn masked_color_std(image: &RasterImage, mask: &BinaryMask) -> Result<f64> {
    mask.check_image_dims(image)?;
    let values: Vec<f64> = mask
        .bits()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| image.luma_at(i))
        .collect();
    if values.is_empty() {
        return Err(Error::EmptyMask);
    }
    // shifted two-pass: a constant region yields exactly zero
    let n = values.len() as f64;
    let pivot = values[0];
    let mean = values.iter().map(|v| v - pivot).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - pivot - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BBox;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    fn rect(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
        BinaryMask::from_rect(w, h, &BBox { x0, y0, x1, y1 })
    }

    fn cand(mask: BinaryMask, score: f64) -> MaskCandidate {
        MaskCandidate::new(mask, score, "img").unwrap()
    }

    fn bfs_components(m: &BinaryMask) -> u32 {
        let (w, h) = (m.width() as i64, m.height() as i64);
        let mut seen = vec![false; (w * h) as usize];
        let mut count = 0;
        for start in 0..(w * h) {
            if !m.bits()[start as usize] || seen[start as usize] {
                continue;
            }
            count += 1;
            let mut queue = VecDeque::from([start]);
            seen[start as usize] = true;
            while let Some(p) = queue.pop_front() {
                let (x, y) = (p % w, p / w);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w || ny >= h {
                            continue;
                        }
                        let q = (ny * w + nx) as usize;
                        if m.bits()[q] && !seen[q] {
                            seen[q] = true;
                            queue.push_back(q as i64);
                        }
                    }
                }
            }
        }
        count
    }

    fn distance_dilate(m: &BinaryMask, r: u32) -> BinaryMask {
        let set: Vec<(u32, u32)> = m.set_pixels().collect();
        let r2 = (r as i64) * (r as i64);
        BinaryMask::from_fn(m.width(), m.height(), |x, y| {
            set.iter().any(|&(sx, sy)| {
                let dx = sx as i64 - x as i64;
                let dy = sy as i64 - y as i64;
                dx * dx + dy * dy <= r2
            })
        })
    }

    /// O(n²) reference greedy, written independently of `nms_indices`.
    fn greedy_oracle(cands: &[MaskCandidate], t: f64) -> Vec<usize> {
        let mut remaining: Vec<usize> = (0..cands.len()).collect();
        let mut kept = Vec::new();
        while !remaining.is_empty() {
            let mut best = 0;
            for k in 1..remaining.len() {
                if cands[remaining[k]].score > cands[remaining[best]].score {
                    best = k;
                }
            }
            let pick = remaining.remove(best);
            kept.push(pick);
            remaining.retain(|&j| {
                let a = &cands[pick].mask;
                let b = &cands[j].mask;
                let mut inter = 0;
                let mut uni = 0;
                for y in 0..a.height() {
                    for x in 0..a.width() {
                        if a.get(x, y) && b.get(x, y) {
                            inter += 1;
                        }
                        if a.get(x, y) || b.get(x, y) {
                            uni += 1;
                        }
                    }
                }
                let iou = if uni == 0 { 1.0 } else { inter as f64 / uni as f64 };
                iou <= t
            });
        }
        kept
    }

    fn random_blob_mask(rng: &mut ChaCha8Rng, w: u32, h: u32) -> BinaryMask {
        let mut m = BinaryMask::empty(w, h);
        for _ in 0..rng.random_range(1..5) {
            let x0 = rng.random_range(0..w - 1);
            let y0 = rng.random_range(0..h - 1);
            let x1 = rng.random_range(x0 + 1..=w);
            let y1 = rng.random_range(y0 + 1..=h);
            for y in y0..y1 {
                for x in x0..x1 {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    #[test]
    fn iou_self_and_disjoint() {
        let a = rect(10, 10, 1, 1, 5, 5);
        let b = rect(10, 10, 6, 6, 9, 9);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);
        assert_eq!(mask_iou(&BinaryMask::empty(3, 3), &BinaryMask::empty(3, 3)).unwrap(), 1.0);
    }

    #[test]
    fn iou_dimension_mismatch() {
        assert!(matches!(
            mask_iou(&BinaryMask::empty(3, 3), &BinaryMask::empty(3, 4)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn iou_of_random_rectangles_matches_pixel_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a = random_blob_mask(&mut rng, 17, 13);
            let b = random_blob_mask(&mut rng, 17, 13);
            let mut inter = 0.0;
            let mut uni = 0.0;
            for y in 0..13 {
                for x in 0..17 {
                    inter += (a.get(x, y) && b.get(x, y)) as u8 as f64;
                    uni += (a.get(x, y) || b.get(x, y)) as u8 as f64;
                }
            }
            assert_eq!(mask_iou(&a, &b).unwrap(), inter / uni);
        }
    }

    #[test]
    fn nms_single_candidate() {
        let c = cand(rect(8, 8, 0, 0, 4, 4), 0.5);
        assert_eq!(nms(&[c.clone()], 0.6).unwrap(), vec![c]);
    }

    #[test]
    fn nms_drops_duplicate() {
        let m = rect(8, 8, 0, 0, 4, 4);
        let out = nms(&[cand(m.clone(), 0.8), cand(m, 0.9)], 0.6).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.9);
    }

    #[test]
    fn nms_threshold_is_strict() {
        // IoU exactly 0.5 survives a 0.5 threshold
        let a = rect(4, 1, 0, 0, 2, 1);
        let b = rect(4, 1, 0, 0, 4, 1);
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.5);
        assert_eq!(nms(&[cand(a.clone(), 0.9), cand(b.clone(), 0.8)], 0.5).unwrap().len(), 2);
        assert_eq!(nms(&[cand(a, 0.9), cand(b, 0.8)], 0.49).unwrap().len(), 1);
    }

    #[test]
    fn nms_tie_prefers_lower_index() {
        let m = rect(8, 8, 0, 0, 4, 4);
        let mut first = cand(m.clone(), 0.7);
        first.source_id = "img".into();
        let kept = nms_indices(&[first, cand(m, 0.7)], &NmsConfig::default()).unwrap();
        assert_eq!(kept, vec![0]);
    }

    #[test]
    fn nms_rejects_mixed_sources() {
        let m = rect(8, 8, 0, 0, 4, 4);
        let other = MaskCandidate::new(m.clone(), 0.5, "other").unwrap();
        assert!(matches!(nms(&[cand(m, 0.9), other], 0.6), Err(Error::MixedSources(..))));
    }

    #[test]
    fn containment_suppresses_sub_object_masks() {
        let whole = rect(20, 20, 0, 0, 20, 20);
        let part = rect(20, 20, 0, 0, 5, 5);
        let cands = [cand(whole, 0.9), cand(part, 0.8)];
        assert_eq!(nms(&cands, 0.6).unwrap().len(), 2);
        let cfg = NmsConfig { iou_threshold: 0.6, containment_threshold: Some(0.9) };
        assert_eq!(nms_with(&cands, &cfg).unwrap().len(), 1);
    }

    #[test]
    fn nms_matches_greedy_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(1..=20);
            let cands: Vec<_> = (0..n)
                .map(|_| cand(random_blob_mask(&mut rng, 12, 12), (rng.random_range(0..20) as f64) / 20.0))
                .collect();
            assert_eq!(nms_indices(&cands, &NmsConfig::default()).unwrap(), greedy_oracle(&cands, 0.6));
        }
    }

    #[test]
    fn components_basic() {
        assert_eq!(connected_components(&BinaryMask::empty(5, 5)), 0);
        let mut diag = BinaryMask::empty(5, 5);
        diag.set(1, 1, true);
        diag.set(2, 2, true);
        assert_eq!(connected_components(&diag), 1);
        diag.set(4, 4, true);
        assert_eq!(connected_components(&diag), 2);
    }

    #[test]
    fn components_u_shape_merges() {
        // two arms joined only at the bottom row
        let m = BinaryMask::from_fn(5, 4, |x, y| x == 0 || x == 4 || y == 3);
        assert_eq!(connected_components(&m), 1);
    }

    #[test]
    fn dilate_radius_zero_is_identity() {
        let m = rect(9, 9, 2, 3, 5, 7);
        assert_eq!(dilate(&m, 0), m);
    }

    #[test]
    fn dilate_single_pixel_radius_one() {
        let mut m = BinaryMask::empty(7, 7);
        m.set(3, 3, true);
        let d = dilate(&m, 1);
        assert_eq!(d, distance_dilate(&m, 1));
        assert_eq!(d.area(), 5);
    }

    #[test]
    fn color_std_cases() {
        let img = RasterImage::filled(4, 4, &[10, 200, 30]).unwrap();
        let full = BinaryMask::full(4, 4);
        assert_eq!(masked_color_std(&img, &full).unwrap(), 0.0);

        let bw = RasterImage::from_fn(4, 4, 1, |x, _, _| if x < 2 { 0 } else { 255 }).unwrap();
        assert!((masked_color_std(&bw, &full).unwrap() - 127.5).abs() < 1e-12);

        assert_eq!(masked_color_std(&img, &BinaryMask::empty(4, 4)), Err(Error::EmptyMask));
        assert!(matches!(
            masked_color_std(&img, &BinaryMask::full(3, 4)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn color_std_matches_two_pass_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pixels: Vec<u8> = (0..16 * 12 * 3).map(|_| rng.random()).collect();
        let img = RasterImage::new(16, 12, 3, pixels).unwrap();
        let mask = random_blob_mask(&mut rng, 16, 12);
        let lumas: Vec<f64> = mask
            .set_pixels()
            .map(|(x, y)| {
                let p = img.pixel(x, y);
                0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
            })
            .collect();
        let mean = lumas.iter().sum::<f64>() / lumas.len() as f64;
        let var = lumas.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / lumas.len() as f64;
        assert!((masked_color_std(&img, &mask).unwrap() - var.sqrt()).abs() < 1e-9);
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1u32..16, 1u32..16).prop_flat_map(|(w, h)| {
            proptest::collection::vec(proptest::bool::weighted(0.2), (w * h) as usize)
                .prop_map(move |bits| BinaryMask::new(w, h, bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn components_match_flood_fill(m in arb_mask()) {
            prop_assert_eq!(connected_components(&m), bfs_components(&m));
        }

        #[test]
        fn dilation_matches_distance_oracle(m in arb_mask(), r in 0u32..4) {
            let d = dilate(&m, r);
            prop_assert_eq!(&d, &distance_dilate(&m, r));
            for (x, y) in m.set_pixels() {
                prop_assert!(d.get(x, y));
            }
            prop_assert!(connected_components(&d) <= connected_components(&m));
        }

        #[test]
        fn dilation_composes(m in arb_mask(), a in 0u32..3, b in 0u32..3) {
            let twice = dilate(&dilate(&m, a), b);
            let once = dilate(&m, a.max(b));
            for (x, y) in once.set_pixels() {
                prop_assert!(twice.get(x, y));
            }
        }

        #[test]
        fn iou_symmetric(a in arb_mask(), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = BinaryMask::from_fn(a.width(), a.height(), |_, _| rng.random_bool(0.3));
            prop_assert_eq!(mask_iou(&a, &b).unwrap(), mask_iou(&b, &a).unwrap());
            // shrinking the intersection never increases IoU
            let shrunk = BinaryMask::from_fn(a.width(), a.height(), |x, y| a.get(x, y) && !b.get(x, y));
            prop_assert!(mask_iou(&shrunk, &b).unwrap() <= mask_iou(&a, &b).unwrap() || b.is_empty());
        }

        #[test]
        fn nms_is_idempotent(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..12);
            let cands: Vec<_> = (0..n)
                .map(|_| cand(random_blob_mask(&mut rng, 10, 10), rng.random()))
                .collect();
            let once = nms(&cands, 0.6).unwrap();
            prop_assert_eq!(nms(&once, 0.6).unwrap(), once.clone());
            for i in 0..once.len() {
                for j in i + 1..once.len() {
                    prop_assert!(mask_iou(&once[i].mask, &once[j].mask).unwrap() <= 0.6);
                }
                if i + 1 < once.len() {
                    prop_assert!(once[i].score >= once[i + 1].score);
                }
            }
        }
    }
}
