//! Uniform access to the external inference services (segmenter, inpainter,
//! foreground scorer, embedder).
//!
//! [`MockGateway`] is a pure in-process stand-in whose answers depend only on
//! the request content; [`HttpGateway`] speaks the JSON/base64-PNG wire format.

mod client;
mod mock;
#[cfg(feature = "server")]
pub mod server;
pub mod wire;

use std::fmt;
use std::str::FromStr;

use forge_core::{BinaryMask, MaskCandidate, RasterImage};
use serde::{Deserialize, Serialize};

pub use client::{HttpGateway, HttpGatewayConfig, GATEWAY_URL_ENV};
pub use mock::{content_key, MockGateway, GOOD_DOG_PNG};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("service unavailable at {endpoint} after {attempts} attempts: {last}")]
    ServiceUnavailable { endpoint: String, attempts: u32, last: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Core(#[from] forge_core::Error),
}

impl GatewayError {
    /// The service could not be reached at all, as opposed to a bad answer
    /// about one particular input.
    pub fn is_unavailable(&self) -> bool {
        matches!(self, GatewayError::ServiceUnavailable { .. })
    }
}

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedSpace {
    ForegroundSemantic,
    MetricClip,
    MetricInceptionLogits,
}

impl EmbedSpace {
    pub const ALL: [EmbedSpace; 3] = [EmbedSpace::ForegroundSemantic, EmbedSpace::MetricClip, EmbedSpace::MetricInceptionLogits];

    /// Declared vector length; responses of any other length are rejected.
    pub fn dim(self) -> usize {
        match self {
            EmbedSpace::ForegroundSemantic => 768,
            EmbedSpace::MetricClip => 512,
            EmbedSpace::MetricInceptionLogits => 1000,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmbedSpace::ForegroundSemantic => "foreground_semantic",
            EmbedSpace::MetricClip => "metric_clip",
            EmbedSpace::MetricInceptionLogits => "metric_inception_logits",
        }
    }
}

impl fmt::Display for EmbedSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmbedSpace {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self> {
        EmbedSpace::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| GatewayError::InvalidRequest(format!("unknown embedding space {s:?}")))
    }
}

/// Every call is idempotent and has no effect on pipeline state.
pub trait Gateway: Send + Sync {
    /// Candidate masks for `image`, tagged with `source_id`.
    fn segment(&self, image: &RasterImage, source_id: &str) -> Result<Vec<MaskCandidate>>;

    /// Same-dims image with the masked region filled.
    fn inpaint(&self, image: &RasterImage, mask: &BinaryMask) -> Result<RasterImage>;

    /// Foreground quality score in [0, 1].
    fn score_foreground(&self, crop: &RasterImage) -> Result<f64>;

    fn embed(&self, image: &RasterImage, space: EmbedSpace) -> Result<Vec<f64>>;

    /// One vector per image, in input order.
    fn embed_batch(&self, images: &[RasterImage], space: EmbedSpace) -> Result<Vec<Vec<f64>>> {
        images.iter().map(|img| self.embed(img, space)).collect()
    }
}

pub(crate) fn check_inpaint_request(image: &RasterImage, mask: &BinaryMask) -> Result<()> {
    if image.dims() != mask.dims() {
        return Err(GatewayError::InvalidRequest(format!(
            "mask {:?} does not match image {:?}",
            mask.dims(),
            image.dims()
        )));
    }
    Ok(())
}

pub(crate) fn check_score(score: f64) -> Result<f64> {
    if score.is_finite() && (0.0..=1.0).contains(&score) {
        Ok(score)
    } else {
        Err(GatewayError::MalformedResponse(format!("score {score} outside [0, 1]")))
    }
}
