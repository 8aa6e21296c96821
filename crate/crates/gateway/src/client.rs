use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use forge_core::{BinaryMask, MaskCandidate, RasterImage};
use serde::{Deserialize, Serialize};

use crate::wire::{self, Request, Response};
use crate::{check_inpaint_request, EmbedSpace, Gateway, GatewayError, Result};

pub const GATEWAY_URL_ENV: &str = "FORGE_GATEWAY_URL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpGatewayConfig {
    pub base_url: String,
    pub bearer_token: Option<String>,
    pub attempts: u32,
    pub backoff_start_ms: u64,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
}

impl Default for HttpGatewayConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8700".into(),
            bearer_token: None,
            attempts: 3,
            backoff_start_ms: 200,
            timeout_ms: 120_000,
            max_in_flight: 8,
        }
    }
}

impl HttpGatewayConfig {
    /// Defaults with the base URL taken from `FORGE_GATEWAY_URL` when set.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Ok(url) = std::env::var(GATEWAY_URL_ENV) {
            cfg.base_url = url;
        }
        cfg
    }
}

/// Counting semaphore bounding concurrent requests.
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Blocking client; safe to share across threads. Connections are pooled
/// per host by the underlying client.
pub struct HttpGateway {
    config: HttpGatewayConfig,
    client: reqwest::blocking::Client,
    limiter: Limiter,
}

impl HttpGateway {
    pub fn new(config: HttpGatewayConfig) -> Result<Self> {
        if config.attempts == 0 || config.max_in_flight == 0 {
            return Err(GatewayError::InvalidRequest("attempts and max_in_flight must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .pool_max_idle_per_host(config.max_in_flight)
            .build()
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let limiter = Limiter { free: Mutex::new(config.max_in_flight), cv: Condvar::new() };
        Ok(Self { config, client, limiter })
    }

    pub fn config(&self) -> &HttpGatewayConfig {
        &self.config
    }

    fn call(&self, endpoint: &str, body: &Request) -> Result<Response> {
        let url = format!("{}{}", self.config.base_url.trim_end_matches('/'), endpoint);
        let _permit = self.limiter.acquire();
        let mut last = String::new();
        for attempt in 0..self.config.attempts {
            if attempt > 0 {
                let wait = self.config.backoff_start_ms.saturating_mul(1 << (attempt - 1).min(20));
                log::warn!("{endpoint}: retry {attempt} in {wait} ms after: {last}");
                thread::sleep(Duration::from_millis(wait));
            }
            let mut req = self.client.post(&url).json(body);
            if let Some(token) = &self.config.bearer_token {
                req = req.bearer_auth(token);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            if status.is_server_error() || status.as_u16() == 429 {
                last = format!("status {status}");
                continue;
            }
            if !status.is_success() {
                let body = resp.text().unwrap_or_default();
                return Err(GatewayError::Rejected { status: status.as_u16(), body });
            }
            let text = match resp.text() {
                Ok(t) => t,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            return serde_json::from_str(&text).map_err(|e| GatewayError::MalformedResponse(format!("{endpoint}: {e}")));
        }
        Err(GatewayError::ServiceUnavailable { endpoint: url, attempts: self.config.attempts, last })
    }
}

impl Gateway for HttpGateway {
    fn segment(&self, image: &RasterImage, source_id: &str) -> Result<Vec<MaskCandidate>> {
        let req = Request { image: wire::encode_image(image)?, mask: None, space: None };
        wire::parse_segment(self.call(wire::SEGMENT, &req)?, image, source_id)
    }

    fn inpaint(&self, image: &RasterImage, mask: &BinaryMask) -> Result<RasterImage> {
        check_inpaint_request(image, mask)?;
        let req = Request { image: wire::encode_image(image)?, mask: Some(wire::mask_field(mask)), space: None };
        wire::parse_inpaint(self.call(wire::INPAINT, &req)?, image)
    }

    fn score_foreground(&self, crop: &RasterImage) -> Result<f64> {
        if crop.pixel_count() == 0 {
            return Err(GatewayError::InvalidRequest("empty crop".into()));
        }
        let req = Request { image: wire::encode_image(crop)?, mask: None, space: None };
        wire::parse_score(self.call(wire::SCORE_FG, &req)?)
    }

    fn embed(&self, image: &RasterImage, space: EmbedSpace) -> Result<Vec<f64>> {
        let req = Request { image: wire::encode_image(image)?, mask: None, space: Some(space.as_str().into()) };
        wire::parse_embed(self.call(wire::EMBED, &req)?, space)
    }
}
