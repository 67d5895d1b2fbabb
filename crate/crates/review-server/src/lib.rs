//! HTTP service for reviewing GLM annotations.
//!
//! All routes live under `/api/v1` and require `Authorization: Bearer <token>`.
//!
//! | method | path | result |
//! |---|---|---|
//! | GET | `/batches` | batch ids |
//! | GET | `/batches/{id}/next?annotator=<id>` | next [`ReviewItem`], or 204 when done |
//! | POST | `/judgments` | 201, 409 duplicate, 404 unknown item, 400 bad label |
//! | GET | `/batches/{id}/stats` | agreement vs GLM and between annotators |
//! | GET | `/batches/{id}/progress` | `{total, judged_by}` |
//! | GET | `/items/{sent_id}` | one item with its GLM rationale |
//!
//! Judgment writes go through a single write lock and the store's journal;
//! concurrent duplicate submissions resolve to the first writer.

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::RwLock;
use serde::Deserialize;
use serde_json::json;
use std::sync::Arc;
use tower_http::cors::CorsLayer;
use valuelens::review::{JudgmentRequest, ReviewError, ReviewItem, ReviewStore};

#[derive(Clone)]
pub struct AppState {
    store: Arc<RwLock<ReviewStore>>,
    token: Arc<str>,
}

impl AppState {
    pub fn new(store: ReviewStore, token: &str) -> Self {
        AppState {
            store: Arc::new(RwLock::new(store)),
            token: token.into(),
        }
    }

    pub fn store(&self) -> &Arc<RwLock<ReviewStore>> {
        &self.store
    }
}

pub struct ApiError(ReviewError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ReviewError::UnknownBatch(_) | ReviewError::NotFound(_) => StatusCode::NOT_FOUND,
            ReviewError::Conflict { .. } => StatusCode::CONFLICT,
            ReviewError::BadRequest(_) | ReviewError::TooMany { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(json!({"error": self.0.to_string()}))).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        ApiError(e)
    }
}

fn error(status: StatusCode, message: &str) -> Response {
    (status, Json(json!({"error": message}))).into_response()
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(&*state.token) {
        next.run(req).await
    } else {
        error(StatusCode::UNAUTHORIZED, "missing or invalid bearer token")
    }
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
}

async fn batches(State(state): State<AppState>) -> Json<Vec<String>> {
    Json(
        state
            .store
            .read()
            .batch_ids()
            .into_iter()
            .map(String::from)
            .collect(),
    )
}

async fn next_item(
    State(state): State<AppState>,
    Path(batch): Path<String>,
    Query(q): Query<NextQuery>,
) -> Result<Response, ApiError> {
    match state.store.read().next_item(&q.annotator, &batch)? {
        Some(item) => Ok(Json(item).into_response()),
        None => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

async fn submit(
    State(state): State<AppState>,
    body: Result<Json<JudgmentRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body.map_err(|e| ApiError(ReviewError::BadRequest(e.body_text())))?;
    let j = state.store.write().submit_judgment(req)?;
    Ok((StatusCode::CREATED, Json(j)).into_response())
}

async fn stats(
    State(state): State<AppState>,
    Path(batch): Path<String>,
) -> Result<Response, ApiError> {
    Ok(Json(state.store.read().stats(&batch)?).into_response())
}

async fn progress(
    State(state): State<AppState>,
    Path(batch): Path<String>,
) -> Result<Response, ApiError> {
    Ok(Json(state.store.read().progress(&batch)?).into_response())
}

async fn item(
    State(state): State<AppState>,
    Path(sent_id): Path<String>,
) -> Result<Json<ReviewItem>, ApiError> {
    state
        .store
        .read()
        .item(&sent_id)
        .map(Json)
        .ok_or(ApiError(ReviewError::NotFound(sent_id)))
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/batches", get(batches))
        .route("/batches/{id}/next", get(next_item))
        .route("/batches/{id}/stats", get(stats))
        .route("/batches/{id}/progress", get(progress))
        .route("/items/{*sent_id}", get(item))
        .route("/judgments", post(submit))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    Router::new()
        .nest("/api/v1", api)
        .layer(CorsLayer::permissive())
}

/// Serves until Ctrl-C.
pub async fn serve(addr: std::net::SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!(
        "review service listening on http://{}",
        listener.local_addr()?
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
