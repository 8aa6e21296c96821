//! Background cropping and foreground augmentation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{mask_bbox, BBox, BinaryMask, Params, RasterImage};
use crate::error::{Error, Result};
use crate::imageops::{blur_image, resize_bilinear, resize_mask_nearest, sample_bilinear};

/// Side length of square training crops.
pub const CROP_SIZE: u32 = 256;

/// Dims after resizing so the shorter edge equals `short`, aspect preserved.
pub fn short_edge_dims(width: u32, height: u32, short: u32) -> (u32, u32) {
    if width <= height {
        let h = ((height as f64 * short as f64 / width as f64).round() as u32).max(short);
        (short, h)
    } else {
        let w = ((width as f64 * short as f64 / height as f64).round() as u32).max(short);
        (w, short)
    }
}

/// Nearest-neighbour mask resize that never loses a nonempty mask: if every
/// set pixel falls between samples, the pixel under the scaled centroid is set.
pub fn resize_mask_preserving(mask: &BinaryMask, new_w: u32, new_h: u32) -> BinaryMask {
    let mut out = resize_mask_nearest(mask, new_w, new_h);
    if out.is_empty() && !mask.is_empty() {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for (x, y) in mask.set_pixels() {
            sx += x as f64 + 0.5;
            sy += y as f64 + 0.5;
            n += 1.0;
        }
        let x = ((sx / n) * new_w as f64 / mask.width() as f64) as u32;
        let y = ((sy / n) * new_h as f64 / mask.height() as f64) as u32;
        out.set(x.min(new_w - 1), y.min(new_h - 1), true);
    }
    out
}

/// Uniformly choose a `size`×`size` window among all placements that overlap
/// the mask. The window may cut through the object.
pub fn choose_window<R: Rng + ?Sized>(mask: &BinaryMask, size: u32, rng: &mut R) -> Result<BBox> {
    let (w, h) = mask.dims();
    if w < size || h < size {
        return Err(Error::InvalidRange(format!("mask {w}x{h} smaller than window {size}")));
    }
    let (wu, hu) = (w as usize, h as usize);
    // 2-D prefix sums of set pixels
    let mut sat = vec![0u32; (wu + 1) * (hu + 1)];
    for y in 0..hu {
        let mut row = 0u32;
        for x in 0..wu {
            row += mask.bits()[y * wu + x] as u32;
            sat[(y + 1) * (wu + 1) + x + 1] = sat[y * (wu + 1) + x + 1] + row;
        }
    }
    let s = size as usize;
    let count = |x0: usize, y0: usize| {
        let (x1, y1) = (x0 + s, y0 + s);
        sat[y1 * (wu + 1) + x1] + sat[y0 * (wu + 1) + x0] - sat[y0 * (wu + 1) + x1] - sat[y1 * (wu + 1) + x0]
    };
    let mut valid = Vec::new();
    for oy in 0..=hu - s {
        for ox in 0..=wu - s {
            if count(ox, oy) > 0 {
                valid.push((ox as u32, oy as u32));
            }
        }
    }
    if valid.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (x0, y0) = valid[rng.random_range(0..valid.len())];
    Ok(BBox { x0, y0, x1: x0 + size, y1: y0 + size })
}

#[derive(Clone, Debug)]
pub struct BackgroundCrop {
    pub image: RasterImage,
    pub mask: BinaryMask,
    /// Window in the coordinates of the resized image.
    pub window: BBox,
    pub resized_dims: (u32, u32),
}

/// Resize so the shorter edge is 256, then crop a random 256×256 window that
/// overlaps the mask. The mask is transformed identically.
pub fn background_crop<R: Rng + ?Sized>(image: &RasterImage, mask: &BinaryMask, rng: &mut R) -> Result<BackgroundCrop> {
    mask.check_image_dims(image)?;
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (nw, nh) = short_edge_dims(image.width(), image.height(), CROP_SIZE);
    let resized = resize_bilinear(image, nw, nh);
    let rmask = resize_mask_preserving(mask, nw, nh);
    let window = choose_window(&rmask, CROP_SIZE, rng)?;
    Ok(BackgroundCrop {
        image: resized.crop(&window)?,
        mask: rmask.crop(&window)?,
        window,
        resized_dims: (nw, nh),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugOp {
    IsoScale,
    Rotate,
    AnisoScale,
    Cutout,
    Brightness,
    Contrast,
    Saturation,
    Filter,
    Noise,
}

impl AugOp {
    pub const ALL: [AugOp; 9] = [
        AugOp::IsoScale,
        AugOp::Rotate,
        AugOp::AnisoScale,
        AugOp::Cutout,
        AugOp::Brightness,
        AugOp::Contrast,
        AugOp::Saturation,
        AugOp::Filter,
        AugOp::Noise,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForegroundAugConfig {
    pub p_iso_scale: f64,
    pub p_rotate: f64,
    pub p_aniso_scale: f64,
    pub p_cutout: f64,
    pub p_brightness: f64,
    pub p_contrast: f64,
    pub p_saturation: f64,
    pub p_filter: f64,
    pub p_noise: f64,
    pub iso_scale_range: (f64, f64),
    pub rotate_max_deg: f64,
    pub aniso_scale_range: (f64, f64),
    /// Largest cutout side as a fraction of the bbox side (0.5 caps area at 25%).
    pub cutout_max_side: f64,
    pub color_factor_range: (f64, f64),
    /// Largest additive-noise σ as a fraction of the 0–255 range.
    pub noise_max_sigma: f64,
}

impl Default for ForegroundAugConfig {
    fn default() -> Self {
        Self {
            p_iso_scale: 0.4,
            p_rotate: 0.4,
            p_aniso_scale: 0.2,
            p_cutout: 0.2,
            p_brightness: 0.2,
            p_contrast: 0.2,
            p_saturation: 0.2,
            p_filter: 0.2,
            p_noise: 0.2,
            iso_scale_range: (0.8, 1.2),
            rotate_max_deg: 30.0,
            aniso_scale_range: (0.8, 1.2),
            cutout_max_side: 0.5,
            color_factor_range: (0.8, 1.2),
            noise_max_sigma: 0.02,
        }
    }
}

impl ForegroundAugConfig {
    pub fn disabled() -> Self {
        Self {
            p_iso_scale: 0.0,
            p_rotate: 0.0,
            p_aniso_scale: 0.0,
            p_cutout: 0.0,
            p_brightness: 0.0,
            p_contrast: 0.0,
            p_saturation: 0.0,
            p_filter: 0.0,
            p_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn probability(&self, op: AugOp) -> f64 {
        match op {
            AugOp::IsoScale => self.p_iso_scale,
            AugOp::Rotate => self.p_rotate,
            AugOp::AnisoScale => self.p_aniso_scale,
            AugOp::Cutout => self.p_cutout,
            AugOp::Brightness => self.p_brightness,
            AugOp::Contrast => self.p_contrast,
            AugOp::Saturation => self.p_saturation,
            AugOp::Filter => self.p_filter,
            AugOp::Noise => self.p_noise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for op in AugOp::ALL {
            let p = self.probability(op);
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidRange(format!("{op:?} probability {p}")));
            }
        }
        for (name, (lo, hi)) in [
            ("iso_scale_range", self.iso_scale_range),
            ("aniso_scale_range", self.aniso_scale_range),
            ("color_factor_range", self.color_factor_range),
        ] {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::InvalidRange(format!("{name} ({lo}, {hi})")));
            }
        }
        if !(0.0..=1.0).contains(&self.cutout_max_side) || self.noise_max_sigma < 0.0 || self.rotate_max_deg < 0.0 {
            return Err(Error::InvalidRange("cutout/noise/rotation magnitude".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ForegroundAug {
    pub image: RasterImage,
    pub mask: BinaryMask,
    pub applied: Vec<AugOp>,
    pub params: Params,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Apply the geometric then colour augmentations, each gated independently.
pub fn augment_foreground<R: Rng + ?Sized>(
    fg: &RasterImage,
    fg_mask: &BinaryMask,
    rng: &mut R,
    config: &ForegroundAugConfig,
) -> Result<ForegroundAug> {
    config.validate()?;
    fg_mask.check_image_dims(fg)?;
    if fg_mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut gates = [false; 9];
    for (g, op) in gates.iter_mut().zip(AugOp::ALL) {
        *g = rng.random::<f64>() < config.probability(op);
    }
    let applied: Vec<AugOp> = AugOp::ALL.iter().zip(gates).filter(|(_, g)| *g).map(|(op, _)| *op).collect();
    let mut params = Params::default();
    let mut image = fg.clone();
    let mut mask = fg_mask.clone();

    let (mut sx, mut sy, mut theta) = (1.0, 1.0, 0.0);
    if gates[0] {
        let s = uniform(rng, config.iso_scale_range);
        params.push("iso_scale", s);
        sx *= s;
        sy *= s;
    }
    if gates[1] {
        let deg = uniform(rng, (-config.rotate_max_deg, config.rotate_max_deg));
        params.push("rotate_deg", deg);
        theta = deg.to_radians();
    }
    if gates[2] {
        let ax = uniform(rng, config.aniso_scale_range);
        let ay = uniform(rng, config.aniso_scale_range);
        params.push("aniso_x", ax);
        params.push("aniso_y", ay);
        sx *= ax;
        sy *= ay;
    }
    if gates[0] || gates[1] || gates[2] {
        let (c, s) = (theta.cos(), theta.sin());
        let m = [[c * sx, -s * sy], [s * sx, c * sy]];
        (image, mask) = warp_affine(&image, &mask, m)?;
    }
    if gates[3] {
        let b = mask_bbox(&mask)?;
        if b.width() >= 2 && b.height() >= 2 {
            let cw = ((uniform(rng, (0.0, config.cutout_max_side)) * b.width() as f64) as u32).max(1);
            let ch = ((uniform(rng, (0.0, config.cutout_max_side)) * b.height() as f64) as u32).max(1);
            let x0 = rng.random_range(b.x0..=b.x1 - cw);
            let y0 = rng.random_range(b.y0..=b.y1 - ch);
            params.push("cutout_x", x0 as f64);
            params.push("cutout_y", y0 as f64);
            params.push("cutout_w", cw as f64);
            params.push("cutout_h", ch as f64);
            let gray = vec![128u8; image.channels() as usize];
            for y in y0..y0 + ch {
                for x in x0..x0 + cw {
                    image.set_pixel(x, y, &gray);
                    mask.set(x, y, false);
                }
            }
            if mask.is_empty() {
                return Err(Error::EmptyMask);
            }
        }
    }

    if gates[4] {
        let f = uniform(rng, config.color_factor_range);
        params.push("brightness", f);
        map_samples(&mut image, |v, _| v * f);
    }
    if gates[5] {
        let f = uniform(rng, config.color_factor_range);
        params.push("contrast", f);
        let n = image.pixel_count();
        let mean = (0..n).map(|i| image.luma_at(i)).sum::<f64>() / n as f64;
        map_samples(&mut image, |v, _| (v - mean) * f + mean);
    }
    if gates[6] {
        let f = uniform(rng, config.color_factor_range);
        params.push("saturation", f);
        if image.channels() == 3 {
            let lumas: Vec<f64> = (0..image.pixel_count()).map(|i| image.luma_at(i)).collect();
            map_samples(&mut image, |v, i| lumas[i] + (v - lumas[i]) * f);
        }
    }
    if gates[7] {
        params.push("blur3x3", 1.0);
        image = blur_image(&image, &[0.25, 0.5, 0.25]);
    }
    if gates[8] {
        let sigma = uniform(rng, (0.0, config.noise_max_sigma)) * 255.0;
        params.push("noise_sigma", sigma);
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidRange(e.to_string()))?;
            for v in image.pixels_mut() {
                *v = (*v as f64 + normal.sample(rng)).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(ForegroundAug { image, mask, applied, params })
}

/// Apply `f(sample, pixel_index)` to every sample, rounding and clamping.
fn map_samples(image: &mut RasterImage, f: impl Fn(f64, usize) -> f64) {
    let c = image.channels() as usize;
    for (k, v) in image.pixels_mut().iter_mut().enumerate() {
        *v = f(*v as f64, k / c).round().clamp(0.0, 255.0) as u8;
    }
}

/// Warp image and mask by the linear map `m` about the mask centroid. The
/// output canvas is the bounding box of the transformed input canvas. Image
/// samples are bilinear with reflect padding; the mask is nearest-neighbour
/// and empty outside the source canvas.
pub fn warp_affine(image: &RasterImage, mask: &BinaryMask, m: [[f64; 2]; 2]) -> Result<(RasterImage, BinaryMask)> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-12 {
        return Err(Error::InvalidRange("singular transform".into()));
    }
    let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
    let (w, h) = (image.width() as f64, image.height() as f64);
    let (mut cx, mut cy, mut n) = (0.0, 0.0, 0.0);
    for (x, y) in mask.set_pixels() {
        cx += x as f64 + 0.5;
        cy += y as f64 + 0.5;
        n += 1.0;
    }
    if n == 0.0 {
        return Err(Error::EmptyMask);
    }
    cx /= n;
    cy /= n;
    let fwd = |x: f64, y: f64| {
        let (dx, dy) = (x - cx, y - cy);
        (m[0][0] * dx + m[0][1] * dy + cx, m[1][0] * dx + m[1][1] * dy + cy)
    };
    let corners = [fwd(0.0, 0.0), fwd(w, 0.0), fwd(0.0, h), fwd(w, h)];
    let min_x = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let max_x = corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let max_y = corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    // small epsilon keeps exact integer extents from gaining a pixel
    let ox = (min_x + 1e-9).floor();
    let oy = (min_y + 1e-9).floor();
    let nw = ((max_x - 1e-9).ceil() - ox).max(1.0) as u32;
    let nh = ((max_y - 1e-9).ceil() - oy).max(1.0) as u32;

    let c = image.channels() as usize;
    let mut buf = vec![0.0; c];
    let mut pixels = Vec::with_capacity(nw as usize * nh as usize * c);
    let mut bits = Vec::with_capacity(nw as usize * nh as usize);
    for v in 0..nh {
        for u in 0..nw {
            let qx = u as f64 + 0.5 + ox - cx;
            let qy = v as f64 + 0.5 + oy - cy;
            let sx = inv[0][0] * qx + inv[0][1] * qy + cx;
            let sy = inv[1][0] * qx + inv[1][1] * qy + cy;
            sample_bilinear(image, sx - 0.5, sy - 0.5, &mut buf);
            pixels.extend(buf.iter().map(|s| s.round().clamp(0.0, 255.0) as u8));
            let inside = sx >= 0.0 && sy >= 0.0 && sx < w && sy < h;
            bits.push(inside && mask.get(sx as u32, sy as u32));
        }
    }
    Ok((RasterImage::new(nw, nh, image.channels(), pixels)?, BinaryMask::new(nw, nh, bits)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn textured(w: u32, h: u32) -> RasterImage {
        RasterImage::from_fn(w, h, 3, |x, y, c| ((x * 13 + y * 7 + c as u32 * 50) % 256) as u8).unwrap()
    }

    #[test]
    fn short_edge_dims_preserve_aspect() {
        assert_eq!(short_edge_dims(512, 256, 256), (512, 256));
        assert_eq!(short_edge_dims(300, 600, 256), (256, 512));
        assert_eq!(short_edge_dims(100, 100, 256), (256, 256));
    }

    #[test]
    fn square_input_has_single_window() {
        let img = textured(256, 256);
        let mask = BinaryMask::from_rect(256, 256, &BBox { x0: 10, y0: 10, x1: 50, y1: 60 });
        let out = background_crop(&img, &mask, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.window, BBox { x0: 0, y0: 0, x1: 256, y1: 256 });
        assert_eq!(out.image, img);
        assert_eq!(out.mask, mask);
    }

    #[test]
    fn wide_input_crops_to_square() {
        let img = textured(512, 256);
        let mask = BinaryMask::from_rect(512, 256, &BBox { x0: 400, y0: 10, x1: 500, y1: 60 });
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let out = background_crop(&img, &mask, &mut rng).unwrap();
            assert_eq!(out.image.dims(), (256, 256));
            assert!(!out.mask.is_empty());
        }
    }

    #[test]
    fn tiny_mask_survives_downscale() {
        let img = textured(1024, 512);
        let mut mask = BinaryMask::empty(1024, 512);
        mask.set(701, 301, true);
        let out = background_crop(&img, &mask, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out.mask.area(), 1);
    }

    #[test]
    fn disabled_augmentation_is_identity() {
        let img = textured(40, 30);
        let mask = BinaryMask::from_rect(40, 30, &BBox { x0: 5, y0: 5, x1: 35, y1: 25 });
        let out = augment_foreground(&img, &mask, &mut ChaCha8Rng::seed_from_u64(3), &ForegroundAugConfig::disabled()).unwrap();
        assert_eq!(out.image, img);
        assert_eq!(out.mask, mask);
        assert!(out.applied.is_empty());
    }

    #[test]
    fn color_ops_leave_mask_alone() {
        let img = textured(40, 30);
        let mask = BinaryMask::from_rect(40, 30, &BBox { x0: 5, y0: 5, x1: 35, y1: 25 });
        let cfg = ForegroundAugConfig {
            p_brightness: 1.0,
            p_contrast: 1.0,
            p_saturation: 1.0,
            p_filter: 1.0,
            p_noise: 1.0,
            ..ForegroundAugConfig::disabled()
        };
        let out = augment_foreground(&img, &mask, &mut ChaCha8Rng::seed_from_u64(8), &cfg).unwrap();
        assert_eq!(out.mask, mask);
        assert_eq!(out.applied.len(), 5);
    }

    #[test]
    fn cutout_stays_within_quarter_of_bbox() {
        let img = textured(40, 40);
        let mask = BinaryMask::from_rect(40, 40, &BBox { x0: 0, y0: 0, x1: 40, y1: 40 });
        let cfg = ForegroundAugConfig { p_cutout: 1.0, ..ForegroundAugConfig::disabled() };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let out = augment_foreground(&img, &mask, &mut rng, &cfg).unwrap();
            let removed = 1600 - out.mask.area();
            assert!(removed >= 1 && removed <= 400, "removed {removed}");
        }
    }

    #[test]
    fn identity_warp_keeps_pixels() {
        let img = textured(20, 16);
        let mask = BinaryMask::from_rect(20, 16, &BBox { x0: 3, y0: 2, x1: 17, y1: 12 });
        let (wi, wm) = warp_affine(&img, &mask, [[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(wi, img);
        assert_eq!(wm, mask);
    }
}
