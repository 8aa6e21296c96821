//! Background inpainting gate based on mean structural similarity.

use crate::corpus::RasterImage;
use crate::error::{Error, Result};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output is `(w-k+1) x (h-k+1)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(j, kv)| kv * tmp[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of the grayscale luma of two images on a unit dynamic range.
///
/// 11×11 Gaussian window (σ = 1.5), valid positions only. Images smaller than
/// the window use the largest odd window that fits.
pub fn ssim(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!("images {:?} vs {:?}", a.dims(), b.dims())));
    }
    let (w, h) = (a.width() as usize, a.height() as usize);
    let mut size = WINDOW.min(w).min(h);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian_kernel(size, SIGMA);

    let x = a.luma_unit();
    let y = b.luma_unit();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();

    let mu_x = filter_valid(&x, w, h, &k);
    let mu_y = filter_valid(&y, w, h, &k);
    let e_xx = filter_valid(&xx, w, h, &k);
    let e_yy = filter_valid(&yy, w, h, &k);
    let e_xy = filter_valid(&xy, w, h, &k);

    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sxx = e_xx[i] - mx * mx;
        let syy = e_yy[i] - my * my;
        let sxy = e_xy[i] - mx * my;
        total += ((2.0 * mx * my + C1) * (2.0 * sxy + C2)) / ((mx * mx + my * my + C1) * (sxx + syy + C2));
    }
    Ok(total / mu_x.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateDecision {
    pub ssim: f64,
    pub keep: bool,
}

/// Keep the inpainted background iff SSIM against the original is at least
/// `threshold`. A rejection discards the whole foreground/background pair.
pub fn gate_inpainting(original: &RasterImage, inpainted: &RasterImage, threshold: f64) -> Result<GateDecision> {
    let s = ssim(original, inpainted)?;
    Ok(GateDecision { ssim: s, keep: s >= threshold })
}

/// Dilation radius applied to a mask before inpainting: `ceil(frac * min(W, H))`.
pub fn dilation_radius(width: u32, height: u32, frac: f64) -> u32 {
    (frac * width.min(height) as f64).ceil() as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> RasterImage {
        RasterImage::from_fn(w, h, 3, |x, y, c| ((x * 7 + y * 3 + c as u32 * 40) % 256) as u8).unwrap()
    }

    #[test]
    fn ssim_self_is_one() {
        let img = gradient(40, 30);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_dimension_mismatch() {
        assert!(ssim(&gradient(20, 20), &gradient(20, 21)).is_err());
    }

    #[test]
    fn tiny_images_use_smaller_window() {
        let a = gradient(5, 8);
        let b = RasterImage::filled(5, 8, &[128, 128, 128]).unwrap();
        let s = ssim(&a, &b).unwrap();
        assert!(s.is_finite() && s < 1.0);
    }

    #[test]
    fn gate_keeps_identical() {
        let img = gradient(32, 32);
        let d = gate_inpainting(&img, &img, 0.8).unwrap();
        assert!(d.keep);
    }

    #[test]
    fn dilation_radius_rounds_up() {
        assert_eq!(dilation_radius(256, 320, 0.03), 8);
        assert_eq!(dilation_radius(100, 100, 0.03), 3);
        assert_eq!(dilation_radius(100, 100, 0.0), 0);
    }
}
