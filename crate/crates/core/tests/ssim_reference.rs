//! SSIM against a second, direct implementation of the windowed formula.

use forge_core::inpaint_qc::{gate_inpainting, ssim};
use forge_core::RasterImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct (non-separable) 11×11 Gaussian-window SSIM over valid positions.
fn reference_ssim(a: &RasterImage, b: &RasterImage) -> f64 {
    let (w, h) = (a.width() as usize, a.height() as usize);
    let luma = |img: &RasterImage, x: usize, y: usize| {
        let p = img.pixel(x as u32, y as u32);
        if p.len() == 1 {
            p[0] as f64 / 255.0
        } else {
            (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
        }
    };
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0.0;
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wgt = win[i][j] / total;
                    mx += wgt * luma(a, x + j, y + i);
                    my += wgt * luma(b, x + j, y + i);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wgt = win[i][j] / total;
                    let dx = luma(a, x + j, y + i) - mx;
                    let dy = luma(b, x + j, y + i) - my;
                    vx += wgt * dx * dx;
                    vy += wgt * dy * dy;
                    cxy += wgt * dx * dy;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    acc / count
}

fn noisy_pair(seed: u64, w: u32, h: u32, amp: f64) -> (RasterImage, RasterImage) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = RasterImage::from_fn(w, h, 3, |x, y, c| {
        (128.0 + 90.0 * ((x as f64 * 0.3).sin() * (y as f64 * 0.2 + c as f64).cos())) as u8
    })
    .unwrap();
    let pixels = a
        .pixels()
        .iter()
        .map(|&v| (v as f64 + rng.random_range(-amp..=amp)).round().clamp(0.0, 255.0) as u8)
        .collect();
    let b = RasterImage::new(w, h, 3, pixels).unwrap();
    (a, b)
}

#[test]
fn matches_reference_on_fixture_pairs() {
    for (seed, amp) in [(1, 10.0), (2, 40.0), (3, 120.0)] {
        let (a, b) = noisy_pair(seed, 48, 40, amp);
        let fast = ssim(&a, &b).unwrap();
        let slow = reference_ssim(&a, &b);
        assert!((fast - slow).abs() < 1e-4, "amp {amp}: {fast} vs {slow}");
        assert!((ssim(&b, &a).unwrap() - fast).abs() < 1e-12);
        assert!(fast <= 1.0);
    }
}

#[test]
fn grayscale_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = RasterImage::from_fn(30, 25, 1, |_, _, _| rng.random()).unwrap();
    let b = RasterImage::from_fn(30, 25, 1, |x, y, _| ((x * y) % 256) as u8).unwrap();
    assert!((ssim(&a, &b).unwrap() - reference_ssim(&a, &b)).abs() < 1e-4);
}

#[test]
fn gate_boundaries() {
    let (a, _) = noisy_pair(5, 64, 64, 0.0);
    let fixtures = gate_fixtures(&a);
    let low = gate_inpainting(&a, &fixtures.0, 0.8).unwrap();
    let high = gate_inpainting(&a, &fixtures.1, 0.8).unwrap();
    assert!((0.79..0.8).contains(&low.ssim), "{}", low.ssim);
    assert!(!low.keep);
    assert!((0.80..0.81).contains(&high.ssim), "{}", high.ssim);
    assert!(high.keep);
}

/// Blend toward a flat fill and bisect the blend weight to land just below
/// and just above 0.8.
fn gate_fixtures(a: &RasterImage) -> (RasterImage, RasterImage) {
    let blend = |t: f64| {
        let pixels = a.pixels().iter().map(|&v| ((1.0 - t) * v as f64 + t * 128.0).round() as u8).collect();
        RasterImage::new(a.width(), a.height(), a.channels(), pixels).unwrap()
    };
    let find = |target: f64| {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if ssim(a, &blend(mid)).unwrap() >= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    (blend(find(0.795) + 1e-3).clone(), blend(find(0.805)))
}
