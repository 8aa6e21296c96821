//! Synthetic three-image input set for end-to-end runs with the mock gateway.
//!
//! Seven candidates in total, each rejected at a designed stage:
//!
//! | image | candidate            | outcome                  |
//! |-------|----------------------|--------------------------|
//! | a     | textured 92×91       | becomes the one tetrad   |
//! | a     | 30×30 block          | relative size            |
//! | a     | 300×30 bar           | aspect ratio             |
//! | b     | textured 200×205     | inpainting gate (SSIM)   |
//! | b     | five 41×41 blobs     | component count          |
//! | c     | flat 100×100         | colour std               |
//! | c     | textured 100×100     | classifier score         |

use std::path::Path;

use forge_core::io::encode_png;
use forge_core::{BBox, RasterImage};
use forge_gateway::MockGateway;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{IoContext, Result};

pub const WIDTH: u32 = 320;
pub const HEIGHT: u32 = 256;

/// Per-stage survivors over the fixture set: raw, after NMS, the five
/// cascade stages, after the SSIM gate.
pub const EXPECTED_COUNTS: [u64; 8] = [7, 7, 6, 5, 4, 3, 2, 1];

/// Binary 4×4-block texture in G and B with a fixed red label.
fn texture(w: u32, h: u32, red: u8, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bw = w.div_ceil(4) as usize;
    let blocks: Vec<u8> = (0..bw * h.div_ceil(4) as usize).map(|_| if rng.random_bool(0.5) { 255 } else { 0 }).collect();
    RasterImage::from_fn(w, h, 3, |x, y, c| if c == 0 { red } else { blocks[(y / 4) as usize * bw + (x / 4) as usize] })
        .expect("valid dims")
}

/// First seed whose texture the mock scores on the requested side of 0.7.
fn scored_texture(w: u32, h: u32, red: u8, want_high: bool) -> RasterImage {
    (0u64..)
        .map(|s| texture(w, h, red, s))
        .find(|t| (MockGateway::hashed_score(t) >= 0.7) == want_high)
        .expect("some seed qualifies")
}

fn paste(dst: &mut RasterImage, src: &RasterImage, x0: u32, y0: u32) {
    for y in 0..src.height() {
        for x in 0..src.width() {
            dst.set_pixel(x0 + x, y0 + y, src.pixel(x, y));
        }
    }
}

fn fill(dst: &mut RasterImage, b: BBox, colour: [u8; 3]) {
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            dst.set_pixel(x, y, &colour);
        }
    }
}

pub fn images() -> Vec<(String, RasterImage)> {
    let mut a = RasterImage::filled(WIDTH, HEIGHT, &[20, 120, 40]).expect("dims");
    paste(&mut a, &scored_texture(92, 91, 200, true), 30, 40);
    fill(&mut a, BBox { x0: 200, y0: 40, x1: 230, y1: 70 }, [90, 200, 200]);
    fill(&mut a, BBox { x0: 10, y0: 200, x1: 310, y1: 230 }, [150, 60, 200]);

    let mut b = RasterImage::filled(WIDTH, HEIGHT, &[60, 60, 160]).expect("dims");
    paste(&mut b, &scored_texture(200, 205, 210, true), 10, 20);
    for (x, y) in [(222, 10), (269, 10), (222, 57), (269, 57), (222, 104)] {
        fill(&mut b, BBox { x0: x, y0: y, x1: x + 41, y1: y + 41 }, [100, 30, 30]);
    }

    let mut c = RasterImage::filled(WIDTH, HEIGHT, &[200, 200, 60]).expect("dims");
    fill(&mut c, BBox { x0: 20, y0: 40, x1: 120, y1: 140 }, [40, 80, 120]);
    paste(&mut c, &scored_texture(100, 100, 170, false), 180, 60);

    vec![("a".into(), a), ("b".into(), b), ("c".into(), c)]
}

/// Write `a.png`, `b.png`, `c.png` into `dir`.
pub fn write_fixture_set(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    for (id, img) in images() {
        let path = dir.join(format!("{id}.png"));
        std::fs::write(&path, encode_png(&img)?).at(&path)?;
    }
    Ok(())
}
