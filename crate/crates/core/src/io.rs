//! PNG and sidecar encoding for rasters, foreground cut-outs and position maps.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage, RgbaImage};

use crate::corpus::{BinaryMask, RasterImage};
use crate::error::{Error, Result};
use crate::prompt::PositionMap;

fn img_err(e: image::ImageError) -> Error {
    Error::InvalidImage(e.to_string())
}

/// Decode PNG (or any format the `image` crate detects) into 1 or 3 channels.
/// Alpha is dropped; 16-bit samples are reduced to 8 bits.
pub fn decode_image(bytes: &[u8]) -> Result<RasterImage> {
    let dynamic = image::load_from_memory(bytes).map_err(img_err)?;
    from_dynamic(dynamic)
}

pub fn read_image(path: &Path) -> Result<RasterImage> {
    let bytes = std::fs::read(path)?;
    decode_image(&bytes)
}

fn from_dynamic(dynamic: DynamicImage) -> Result<RasterImage> {
    match dynamic {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            RasterImage::new(w, h, 1, g.into_raw())
        }
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            let g = dynamic.to_luma8();
            let (w, h) = g.dimensions();
            RasterImage::new(w, h, 1, g.into_raw())
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            RasterImage::new(w, h, 3, rgb.into_raw())
        }
    }
}

fn encode(dynamic: DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    dynamic.write_to(&mut out, ImageFormat::Png).map_err(img_err)?;
    Ok(out.into_inner())
}

pub fn encode_png(image: &RasterImage) -> Result<Vec<u8>> {
    let (w, h) = image.dims();
    let dynamic = match image.channels() {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, image.pixels().to_vec()).expect("sized")),
        _ => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, image.pixels().to_vec()).expect("sized")),
    };
    encode(dynamic)
}

/// RGBA PNG whose alpha channel is the mask (255 inside, 0 outside).
pub fn encode_rgba_png(image: &RasterImage, mask: &BinaryMask) -> Result<Vec<u8>> {
    mask.check_image_dims(image)?;
    let rgb = image.to_rgb();
    let mut raw = Vec::with_capacity(rgb.pixel_count() * 4);
    for (p, &m) in rgb.pixels().chunks(3).zip(mask.bits()) {
        raw.extend_from_slice(p);
        raw.push(if m { 255 } else { 0 });
    }
    let (w, h) = image.dims();
    encode(DynamicImage::ImageRgba8(RgbaImage::from_raw(w, h, raw).expect("sized")))
}

/// Split an RGBA PNG back into colour and alpha mask (alpha ≥ 128 is set).
pub fn decode_rgba_png(bytes: &[u8]) -> Result<(RasterImage, BinaryMask)> {
    let rgba = image::load_from_memory(bytes).map_err(img_err)?.to_rgba8();
    let (w, h) = rgba.dimensions();
    let mut rgb = Vec::with_capacity(w as usize * h as usize * 3);
    let mut bits = Vec::with_capacity(w as usize * h as usize);
    for p in rgba.pixels() {
        rgb.extend_from_slice(&p.0[..3]);
        bits.push(p.0[3] >= 128);
    }
    Ok((RasterImage::new(w, h, 3, rgb)?, BinaryMask::new(w, h, bits)?))
}

/// 8-bit grayscale PNG of a position map (values quantized to 0–255).
pub fn encode_position_map_png(map: &PositionMap) -> Result<Vec<u8>> {
    let gray = GrayImage::from_raw(map.width, map.height, map.to_u8()).expect("sized");
    encode(DynamicImage::ImageLuma8(gray))
}

const PMAP_MAGIC: &[u8; 4] = b"PMAP";

/// Lossless sidecar: `PMAP`, u32 width, u32 height, then little-endian f32 values.
pub fn encode_position_map_f32(map: &PositionMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + map.values.len() * 4);
    out.extend_from_slice(PMAP_MAGIC);
    out.extend_from_slice(&map.width.to_le_bytes());
    out.extend_from_slice(&map.height.to_le_bytes());
    for v in &map.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_position_map_f32(bytes: &[u8]) -> Result<PositionMap> {
    if bytes.len() < 12 || &bytes[..4] != PMAP_MAGIC {
        return Err(Error::InvalidImage("not a position-map sidecar".into()));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let height = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let body = &bytes[12..];
    if body.len() != width as usize * height as usize * 4 {
        return Err(Error::InvalidImage("truncated position-map sidecar".into()));
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok(PositionMap { width, height, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let img = RasterImage::from_fn(7, 5, 3, |x, y, c| (x * 30 + y * 7 + c as u32) as u8).unwrap();
        assert_eq!(decode_image(&encode_png(&img).unwrap()).unwrap(), img);
        let gray = RasterImage::from_fn(7, 5, 1, |x, y, _| (x * y) as u8).unwrap();
        assert_eq!(decode_image(&encode_png(&gray).unwrap()).unwrap(), gray);
    }

    #[test]
    fn rgba_round_trip() {
        let img = RasterImage::from_fn(6, 4, 3, |x, _, c| (x * 40 + c as u32) as u8).unwrap();
        let mask = BinaryMask::from_fn(6, 4, |x, y| x > y);
        let (back, m) = decode_rgba_png(&encode_rgba_png(&img, &mask).unwrap()).unwrap();
        assert_eq!(back, img);
        assert_eq!(m, mask);
    }

    #[test]
    fn sidecar_round_trip() {
        let map = PositionMap { width: 3, height: 2, values: vec![0.0, 0.25, 1.0, 0.1, 0.7, 0.333] };
        assert_eq!(decode_position_map_f32(&encode_position_map_f32(&map)).unwrap(), map);
        assert!(decode_position_map_f32(b"PMAP\x01\0\0\0\x01\0\0\0").is_err());
    }
}
