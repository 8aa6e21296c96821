//! `GET /api/pending`, `POST /api/label`, `GET /api/export`,
//! `GET /api/crop/{id}`.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use forge_core::qc_filters::FilterVerdict;
use serde::{Deserialize, Serialize};

use crate::{Catalog, Label, LabelStore, ReviewError};

pub const DEFAULT_PAGE_SIZE: usize = 20;
pub const MAX_PAGE_SIZE: usize = 500;

pub struct AppState {
    pub catalog: Catalog,
    pub store: Mutex<LabelStore>,
    /// Shared token required as `Authorization: Bearer <token>` when set.
    pub token: Option<String>,
}

type Shared = Arc<AppState>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PendingFilter {
    #[default]
    All,
    Unlabeled,
    Labeled,
    Rejected,
    Passed,
}

#[derive(Debug, Default, Deserialize)]
pub struct PendingQuery {
    /// Zero-based.
    #[serde(default)]
    pub page: usize,
    pub size: Option<usize>,
    #[serde(default)]
    pub filter: PendingFilter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictView {
    #[serde(flatten)]
    pub verdict: FilterVerdict,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurrentLabel {
    pub label: Label,
    pub annotator: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingItem {
    pub id: String,
    pub source_id: String,
    pub source_image: String,
    pub crop_url: String,
    pub passed: bool,
    pub verdicts: Vec<VerdictView>,
    pub label: Option<CurrentLabel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingPage {
    pub page: usize,
    pub size: usize,
    pub total: usize,
    pub items: Vec<PendingItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub id: String,
    pub label: Label,
    pub annotator: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelAck {
    pub id: String,
    pub label: Label,
    pub at_ms: u64,
}

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let (status, error) = match &self {
            ReviewError::UnknownId(_) => (StatusCode::NOT_FOUND, "UnknownId"),
            ReviewError::EmptyStore => (StatusCode::CONFLICT, "EmptyStore"),
            ReviewError::CorruptLog { .. } | ReviewError::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "Internal"),
        };
        (status, Json(ErrorBody { error, message: self.to_string() })).into_response()
    }
}

fn lock(state: &AppState) -> std::sync::MutexGuard<'_, LabelStore> {
    state.store.lock().unwrap_or_else(|e| e.into_inner())
}

async fn pending(State(state): State<Shared>, Query(q): Query<PendingQuery>) -> Json<PendingPage> {
    let size = q.size.unwrap_or(DEFAULT_PAGE_SIZE).clamp(1, MAX_PAGE_SIZE);
    let store = lock(&state);
    let selected: Vec<_> = state
        .catalog
        .items()
        .iter()
        .filter(|item| match q.filter {
            PendingFilter::All => true,
            PendingFilter::Unlabeled => store.get(&item.id).is_none(),
            PendingFilter::Labeled => store.get(&item.id).is_some(),
            PendingFilter::Rejected => !item.passed(),
            PendingFilter::Passed => item.passed(),
        })
        .collect();
    let total = selected.len();
    let items = selected
        .into_iter()
        .skip(q.page.saturating_mul(size))
        .take(size)
        .map(|item| PendingItem {
            id: item.id.clone(),
            source_id: item.source_id.clone(),
            source_image: item.source_image.clone(),
            crop_url: format!("/api/crop/{}", item.id),
            passed: item.passed(),
            verdicts: item.verdicts.iter().map(|v| VerdictView { verdict: v.clone(), text: v.describe() }).collect(),
            label: store.get(&item.id).map(|ev| CurrentLabel { label: ev.label, annotator: ev.annotator.clone() }),
        })
        .collect();
    Json(PendingPage { page: q.page, size, total, items })
}

async fn label(State(state): State<Shared>, Json(req): Json<LabelRequest>) -> Result<Json<LabelAck>, ReviewError> {
    let ev = lock(&state).submit(&state.catalog, &req.id, req.label, &req.annotator)?;
    Ok(Json(LabelAck { id: ev.id, label: ev.label, at_ms: ev.at_ms }))
}

async fn export(State(state): State<Shared>) -> Result<Response, ReviewError> {
    let body = lock(&state).export_jsonl(&state.catalog)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn crop(State(state): State<Shared>, Path(id): Path<String>) -> Result<Response, ReviewError> {
    let bytes = state.catalog.crop_bytes(&id)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn require_token(State(state): State<Shared>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let given = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
        if given != Some(format!("Bearer {token}").as_str()) {
            return StatusCode::UNAUTHORIZED.into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/pending", get(pending))
        .route("/api/label", post(label))
        .route("/api/export", get(export))
        .route("/api/crop/{id}", get(crop))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Serve on a background runtime thread; returns the bound address.
pub fn spawn(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<SocketAddr> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let local = std_listener.local_addr()?;
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    std::thread::spawn(move || {
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener");
            if let Err(e) = serve(listener, state).await {
                log::error!("review server stopped: {e}");
            }
        })
    });
    Ok(local)
}

/// Serve on the current thread until the process exits.
pub fn run_blocking(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("review api on http://{}", listener.local_addr()?);
        serve(listener, state).await
    })
}
