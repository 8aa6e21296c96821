//! Position-map export and forward-noising previews.

use std::path::Path;

use forge_core::diffusion::{forward_noise, mask_to_signed, NoiseSchedule, Tensor};
use forge_core::io::{encode_png, encode_position_map_f32, encode_position_map_png};
use forge_core::prompt::{latent_dims, rasterize};
use forge_core::{BinaryMask, RasterImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{IoContext, PipelineError, Result};
use crate::manifest::Manifest;

/// Write `<id>.png` (8-bit view) and `<id>.pmap` (exact f32) per tetrad at
/// latent resolution. Returns the number of maps written.
pub fn encode_prompts(out_dir: &Path, manifest: &Manifest, dest: &Path) -> Result<usize> {
    std::fs::create_dir_all(dest).at(dest)?;
    let mut n = 0;
    for t in manifest.tetrads() {
        let r = &t.record;
        let (w, h) = r.gt_dims;
        let map = rasterize(&r.prompt, (w, h), latent_dims(w, h))?;
        let png = dest.join(format!("{}.png", r.id));
        std::fs::write(&png, encode_position_map_png(&map)?).at(&png)?;
        let raw = dest.join(format!("{}.pmap", r.id));
        std::fs::write(&raw, encode_position_map_f32(&map)).at(&raw)?;
        n += 1;
    }
    log::info!("wrote {n} position maps under {}", out_dir.display());
    Ok(n)
}

fn image_tensor(img: &RasterImage) -> Tensor {
    let (w, h, c) = (img.width() as usize, img.height() as usize, img.channels() as usize);
    let data = img.pixels().iter().map(|&v| v as f64 / 127.5 - 1.0).collect();
    Tensor::new(vec![h, w, c], data).expect("sized")
}

fn tensor_image(t: &Tensor, w: u32, h: u32, c: u8) -> Result<RasterImage> {
    let px = t.data().iter().map(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8).collect();
    Ok(RasterImage::new(w, h, c, px)?)
}

/// Forward-noise an image (and optionally its mask) at each step in `steps`,
/// writing `t<step>.png` and `mask_t<step>.png`. Noise is drawn once per
/// stream so the frames differ only in t.
pub fn noise_preview(
    image: &RasterImage,
    mask: Option<&BinaryMask>,
    steps: &[usize],
    sched: &NoiseSchedule,
    seed: u64,
    dest: &Path,
) -> Result<Vec<String>> {
    std::fs::create_dir_all(dest).at(dest)?;
    if let Some(t) = steps.iter().find(|&&t| t >= sched.steps()) {
        return Err(PipelineError::Config(format!("step {t} outside 0..{}", sched.steps())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = image_tensor(image);
    let eps = Tensor::randn(x0.shape(), &mut rng);
    let m0 = match mask {
        Some(m) => {
            m.check_image_dims(image)?;
            let bits: Vec<f64> = m.bits().iter().map(|&b| b as u8 as f64).collect();
            let t = Tensor::new(vec![m.height() as usize, m.width() as usize], mask_to_signed(&bits))?;
            let e = Tensor::randn(t.shape(), &mut rng);
            Some((t, e))
        }
        None => None,
    };
    let mut written = Vec::new();
    for &t in steps {
        let xt = forward_noise(&x0, t, &eps, sched)?;
        let name = format!("t{t:04}.png");
        let path = dest.join(&name);
        std::fs::write(&path, encode_png(&tensor_image(&xt, image.width(), image.height(), image.channels())?)?).at(&path)?;
        written.push(name);
        if let Some((m, e)) = &m0 {
            let mt = forward_noise(m, t, e, sched)?;
            let name = format!("mask_t{t:04}.png");
            let path = dest.join(&name);
            std::fs::write(&path, encode_png(&tensor_image(&mt, image.width(), image.height(), 1)?)?).at(&path)?;
            written.push(name);
        }
    }
    Ok(written)
}
