//! HTTP front for any [`Gateway`], speaking the same envelope as
//! [`crate::HttpGateway`]. Used to serve the mock over the wire.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use forge_core::rle_decode;

use crate::wire::{self, Request, Response, WireMask};
use crate::{EmbedSpace, Gateway, GatewayError};

type Shared = Arc<dyn Gateway>;
type Reply = Result<Json<Response>, (StatusCode, String)>;

fn status_of(e: &GatewayError) -> StatusCode {
    match e {
        GatewayError::InvalidRequest(_) | GatewayError::MalformedResponse(_) | GatewayError::Core(_) => StatusCode::BAD_REQUEST,
        _ => StatusCode::BAD_GATEWAY,
    }
}

async fn run<F>(gw: Shared, f: F) -> Reply
where
    F: FnOnce(&dyn Gateway) -> Result<Response, GatewayError> + Send + 'static,
{
    let out = tokio::task::spawn_blocking(move || f(gw.as_ref()))
        .await
        .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    out.map(Json).map_err(|e| (status_of(&e), e.to_string()))
}

async fn segment(State(gw): State<Shared>, Json(req): Json<Request>) -> Reply {
    run(gw, move |g| {
        let image = wire::decode_image_field(&req.image).map_err(bad)?;
        let masks = g.segment(&image, "")?;
        let masks = masks.iter().map(|c| WireMask { rle: wire::mask_field(&c.mask), score: c.score }).collect();
        Ok(Response { masks: Some(masks), ..Default::default() })
    })
    .await
}

async fn inpaint(State(gw): State<Shared>, Json(req): Json<Request>) -> Reply {
    run(gw, move |g| {
        let image = wire::decode_image_field(&req.image).map_err(bad)?;
        let rle = req.mask.ok_or_else(|| GatewayError::InvalidRequest("missing mask".into()))?;
        let mask = rle_decode(&rle)?;
        let out = g.inpaint(&image, &mask)?;
        Ok(Response { image: Some(wire::encode_image(&out)?), ..Default::default() })
    })
    .await
}

async fn score_fg(State(gw): State<Shared>, Json(req): Json<Request>) -> Reply {
    run(gw, move |g| {
        let image = wire::decode_image_field(&req.image).map_err(bad)?;
        Ok(Response { score: Some(g.score_foreground(&image)?), ..Default::default() })
    })
    .await
}

async fn embed(State(gw): State<Shared>, Json(req): Json<Request>) -> Reply {
    run(gw, move |g| {
        let image = wire::decode_image_field(&req.image).map_err(bad)?;
        let space: EmbedSpace = req.space.as_deref().unwrap_or("").parse()?;
        Ok(Response { vector: Some(g.embed(&image, space)?), ..Default::default() })
    })
    .await
}

/// Decoding failures on the server side are the client's fault.
fn bad(e: GatewayError) -> GatewayError {
    GatewayError::InvalidRequest(e.to_string())
}

pub fn router(gateway: Shared) -> Router {
    Router::new()
        .route(wire::SEGMENT, post(segment))
        .route(wire::INPAINT, post(inpaint))
        .route(wire::SCORE_FG, post(score_fg))
        .route(wire::EMBED, post(embed))
        .layer(axum::extract::DefaultBodyLimit::max(256 << 20))
        .with_state(gateway)
}

pub async fn serve(listener: tokio::net::TcpListener, gateway: Shared) -> std::io::Result<()> {
    axum::serve(listener, router(gateway)).await
}

/// Run the server on its own runtime thread; returns the bound address.
pub fn spawn(addr: SocketAddr, gateway: Shared) -> std::io::Result<SocketAddr> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let local = std_listener.local_addr()?;
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    std::thread::spawn(move || {
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener");
            if let Err(e) = serve(listener, gateway).await {
                log::error!("gateway server stopped: {e}");
            }
        })
    });
    Ok(local)
}
