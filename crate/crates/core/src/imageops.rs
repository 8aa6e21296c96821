//! Resampling and blur helpers shared by augmentation and prompt encoding.

use crate::corpus::{BinaryMask, RasterImage};

/// Normalized 1-D Gaussian kernel with radius `ceil(3σ)`.
pub fn gaussian_kernel_1d(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

#[inline]
fn clamp_index(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

/// Separable convolution of a single-channel float field with edge clamping.
pub fn convolve_separable(field: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * field[y * w + clamp_index(x as i64 + j as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * tmp[clamp_index(y as i64 + j as i64 - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Gaussian blur of a 0/1 mask into a soft field in [0, 1].
pub fn feather_mask(mask: &BinaryMask, sigma: f64) -> Vec<f64> {
    let field: Vec<f64> = mask.bits().iter().map(|&b| b as u8 as f64).collect();
    if sigma <= 0.0 {
        return field;
    }
    let k = gaussian_kernel_1d(sigma);
    convolve_separable(&field, mask.width() as usize, mask.height() as usize, &k)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect()
}

/// Gaussian blur applied per channel, rounded back to 8 bits.
pub fn blur_image(image: &RasterImage, kernel: &[f64]) -> RasterImage {
    let (w, h, c) = (image.width() as usize, image.height() as usize, image.channels() as usize);
    let mut out = image.clone();
    for ch in 0..c {
        let field: Vec<f64> = (0..w * h).map(|i| image.pixels()[i * c + ch] as f64).collect();
        let blurred = convolve_separable(&field, w, h, kernel);
        for (i, v) in blurred.into_iter().enumerate() {
            out.pixels_mut()[i * c + ch] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Reflect-101 style index folding used for out-of-canvas sampling.
#[inline]
pub fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as i64 {
        m = period - m;
    }
    m as usize
}

/// Bilinear sample at continuous pixel-centre coordinates with reflect padding.
pub fn sample_bilinear(image: &RasterImage, fx: f64, fy: f64, out: &mut [f64]) {
    let (w, h, c) = (image.width() as usize, image.height() as usize, image.channels() as usize);
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let xs = [reflect_index(x0 as i64, w), reflect_index(x0 as i64 + 1, w)];
    let ys = [reflect_index(y0 as i64, h), reflect_index(y0 as i64 + 1, h)];
    let px = image.pixels();
    for (ch, o) in out.iter_mut().enumerate().take(c) {
        let p = |x: usize, y: usize| px[(y * w + x) * c + ch] as f64;
        let top = p(xs[0], ys[0]) * (1.0 - tx) + p(xs[1], ys[0]) * tx;
        let bottom = p(xs[0], ys[1]) * (1.0 - tx) + p(xs[1], ys[1]) * tx;
        *o = top * (1.0 - ty) + bottom * ty;
    }
}

/// Bilinear resize using pixel-centre alignment.
pub fn resize_bilinear(image: &RasterImage, new_w: u32, new_h: u32) -> RasterImage {
    if image.dims() == (new_w, new_h) {
        return image.clone();
    }
    let sx = image.width() as f64 / new_w as f64;
    let sy = image.height() as f64 / new_h as f64;
    let c = image.channels() as usize;
    let mut buf = vec![0.0; c];
    let mut pixels = Vec::with_capacity(new_w as usize * new_h as usize * c);
    for y in 0..new_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).max(0.0);
        for x in 0..new_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).max(0.0);
            sample_bilinear(image, fx, fy, &mut buf);
            pixels.extend(buf.iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    RasterImage::new(new_w, new_h, image.channels(), pixels).expect("dims are positive")
}

/// Nearest-neighbour mask resize with pixel-centre alignment.
pub fn resize_mask_nearest(mask: &BinaryMask, new_w: u32, new_h: u32) -> BinaryMask {
    if mask.dims() == (new_w, new_h) {
        return mask.clone();
    }
    let sx = mask.width() as f64 / new_w as f64;
    let sy = mask.height() as f64 / new_h as f64;
    BinaryMask::from_fn(new_w, new_h, |x, y| {
        let src_x = (((x as f64 + 0.5) * sx) as u32).min(mask.width() - 1);
        let src_y = (((y as f64 + 0.5) * sy) as u32).min(mask.height() - 1);
        mask.get(src_x, src_y)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized() {
        let k = gaussian_kernel_1d(1.3);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k.len() % 2, 1);
    }

    #[test]
    fn reflect_folds() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(2, 5), 2);
        assert_eq!(reflect_index(-7, 1), 0);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = RasterImage::filled(10, 6, &[12, 34, 56]).unwrap();
        assert_eq!(resize_bilinear(&img, 10, 6), img);
        let up = resize_bilinear(&img, 25, 15);
        assert!(up.pixels().chunks(3).all(|p| p == [12, 34, 56]));
    }

    #[test]
    fn feathering_stays_in_unit_range() {
        let mut m = BinaryMask::empty(20, 20);
        for y in 5..15 {
            for x in 5..15 {
                m.set(x, y, true);
            }
        }
        let f = feather_mask(&m, 2.0);
        assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(f[10 * 20 + 10] > 0.9);
        assert!(f[0] < 0.01);
    }
}
