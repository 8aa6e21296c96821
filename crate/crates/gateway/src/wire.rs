//! JSON envelope shared by the HTTP client and server.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use forge_core::io::{decode_image, encode_png};
use forge_core::{rle_decode, BinaryMask, MaskCandidate, RasterImage, RleMask};
use serde::{Deserialize, Serialize};

use crate::{check_score, EmbedSpace, GatewayError, Result};

pub const SEGMENT: &str = "/segment";
pub const INPAINT: &str = "/inpaint";
pub const SCORE_FG: &str = "/score_fg";
pub const EMBED: &str = "/embed";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<RleMask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireMask {
    pub rle: RleMask,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<Vec<WireMask>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
}

pub fn encode_image(image: &RasterImage) -> Result<String> {
    Ok(STANDARD.encode(encode_png(image)?))
}

pub fn decode_image_field(b64: &str) -> Result<RasterImage> {
    let bytes = STANDARD.decode(b64).map_err(|e| GatewayError::MalformedResponse(format!("base64: {e}")))?;
    decode_image(&bytes).map_err(|e| GatewayError::MalformedResponse(e.to_string()))
}

fn missing(field: &str) -> GatewayError {
    GatewayError::MalformedResponse(format!("missing field {field:?}"))
}

/// Check masks against the image dims and score range before accepting them.
pub fn parse_segment(resp: Response, image: &RasterImage, source_id: &str) -> Result<Vec<MaskCandidate>> {
    let masks = resp.masks.ok_or_else(|| missing("masks"))?;
    masks
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            if (m.rle.width, m.rle.height) != image.dims() {
                return Err(GatewayError::MalformedResponse(format!(
                    "mask {i} is {}x{}, image is {}x{}",
                    m.rle.width,
                    m.rle.height,
                    image.width(),
                    image.height()
                )));
            }
            let mask = rle_decode(&m.rle).map_err(|e| GatewayError::MalformedResponse(format!("mask {i}: {e}")))?;
            let score = check_score(m.score)?;
            Ok(MaskCandidate::new(mask, score, source_id)?)
        })
        .collect()
}

pub fn parse_inpaint(resp: Response, image: &RasterImage) -> Result<RasterImage> {
    let out = decode_image_field(resp.image.as_deref().ok_or_else(|| missing("image"))?)?;
    if out.dims() != image.dims() {
        return Err(GatewayError::MalformedResponse(format!("inpainted image is {:?}, expected {:?}", out.dims(), image.dims())));
    }
    Ok(if out.channels() == image.channels() {
        out
    } else if image.channels() == 3 {
        out.to_rgb()
    } else {
        RasterImage::from_fn(out.width(), out.height(), 1, |x, y, _| out.luma_at((y * out.width() + x) as usize).round() as u8)?
    })
}

pub fn parse_score(resp: Response) -> Result<f64> {
    check_score(resp.score.ok_or_else(|| missing("score"))?)
}

pub fn parse_embed(resp: Response, space: EmbedSpace) -> Result<Vec<f64>> {
    let v = resp.vector.ok_or_else(|| missing("vector"))?;
    if v.len() != space.dim() {
        return Err(GatewayError::MalformedResponse(format!("{space} vector has {} values, expected {}", v.len(), space.dim())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(GatewayError::MalformedResponse(format!("{space} vector has non-finite values")));
    }
    Ok(v)
}

pub fn mask_field(mask: &BinaryMask) -> RleMask {
    forge_core::rle_encode(mask)
}
