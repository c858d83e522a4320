use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use modpipe_core::detection::TrustedVerdict;
use modpipe_core::model::{ContentItem, Modality, OriginContext};
use modpipe_core::pipeline::ModerationConfig;
use serde::Deserialize;

use crate::error::ApiError;
use crate::state::{AppState, AuditRequest};

const MAX_UPLOAD: usize = 64 * 1024 * 1024;

pub fn router(state: AppState) -> Router {
    let mut r = Router::new()
        .route("/v1/health", get(|| async { "ok" }))
        .route("/v1/content", post(ingest))
        .route("/v1/content/{id}/decision", get(decision))
        .route("/v1/content/{id}/history", get(history))
        .route("/v1/content/{id}/media", get(media))
        .route("/v1/review/queue", get(queue))
        .route("/v1/review/{task}/verdict", post(verdict))
        .route("/v1/policy", get(get_policy).put(put_policy))
        .route("/v1/policy/decision-table", get(decision_table))
        .route("/v1/audit/run", post(run_audit))
        .route("/v1/audit/{id}", get(get_audit));
    if cfg!(debug_assertions) {
        r = r.route("/v1/debug/verify/{id}", get(verify));
    }
    r.layer(DefaultBodyLimit::max(MAX_UPLOAD)).with_state(state)
}

/// Runs a state operation off the async executor; detectors may block.
async fn blocking<T, F>(state: AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(AppState) -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(state))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(v)| v)
        .map_err(|e| ApiError::BadRequest(e.body_text()))
}

/// The manifest part of an upload: a manifest record without file paths.
#[derive(Debug, Deserialize)]
struct IngestRecord {
    id: String,
    modality: Modality,
    #[serde(default)]
    origin: OriginContext,
}

async fn ingest(State(state): State<AppState>, mut form: Multipart) -> Result<Response, ApiError> {
    let bad = |e: axum::extract::multipart::MultipartError| ApiError::BadRequest(e.body_text());
    let (mut record, mut media, mut marker) = (None, None, None);
    while let Some(field) = form.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_owned();
        let bytes = field.bytes().await.map_err(bad)?;
        match name.as_str() {
            "manifest" => {
                let r: IngestRecord = serde_json::from_slice(&bytes)
                    .map_err(|e| ApiError::BadRequest(format!("manifest: {e}")))?;
                record = Some(r);
            }
            "media" => media = Some(bytes.to_vec()),
            "marker" => marker = Some(bytes.to_vec()),
            other => return Err(ApiError::BadRequest(format!("unexpected part `{other}`"))),
        }
    }
    let record = record.ok_or_else(|| ApiError::BadRequest("missing `manifest` part".into()))?;
    let media = media.ok_or_else(|| ApiError::BadRequest("missing `media` part".into()))?;
    if record.id.is_empty() {
        return Err(ApiError::BadRequest("empty content id".into()));
    }
    let mut origin = record.origin;
    origin.normalize();
    let item = ContentItem::new(record.id, record.modality, media)
        .with_origin(origin)
        .with_marker_block(marker);
    item.check_payload()
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let receipt = blocking(state, move |s| s.ingest(item)).await?;
    let status = if receipt.created {
        StatusCode::ACCEPTED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(receipt)).into_response())
}

async fn decision(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let d = state
        .decision(&id)
        .ok_or_else(|| ApiError::NotFound(format!("no decision for `{id}`")))?;
    Ok(Json(d).into_response())
}

async fn history(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let h = state.history(&id);
    if h.is_empty() {
        return Err(ApiError::NotFound(format!("no decision for `{id}`")));
    }
    Ok(Json(h).into_response())
}

async fn media(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let (modality, bytes) = state
        .media(&id)
        .ok_or_else(|| ApiError::NotFound(format!("no media for `{id}`")))?;
    let content_type = match modality {
        Modality::Text => "text/plain; charset=utf-8",
        Modality::Raster => "image/x-portable-pixmap",
        Modality::Audio => "application/octet-stream",
    };
    Ok((
        [
            (header::CONTENT_TYPE, content_type),
            (
                header::HeaderName::from_static("x-modality"),
                modality.as_str(),
            ),
        ],
        bytes,
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
struct QueueQuery {
    verifier: String,
}

async fn queue(
    State(state): State<AppState>,
    Query(q): Query<QueueQuery>,
) -> Result<Response, ApiError> {
    let entries = blocking(state, move |s| s.queue(&q.verifier)).await?;
    Ok(Json(entries).into_response())
}

async fn verdict(
    State(state): State<AppState>,
    Path(task): Path<String>,
    body: Result<Json<TrustedVerdict>, JsonRejection>,
) -> Result<Response, ApiError> {
    let v = json_body(body)?;
    let receipt = blocking(state, move |s| s.submit_verdict(&task, v)).await?;
    Ok(Json(receipt).into_response())
}

async fn get_policy(State(state): State<AppState>) -> Json<crate::state::PolicyView> {
    Json(state.policy())
}

async fn put_policy(
    State(state): State<AppState>,
    body: Result<Json<ModerationConfig>, JsonRejection>,
) -> Result<Response, ApiError> {
    let config = json_body(body)?;
    let view = blocking(state, move |s| s.set_policy(config)).await?;
    Ok(Json(view).into_response())
}

async fn decision_table(State(state): State<AppState>) -> Response {
    (
        [(header::CONTENT_TYPE, "text/csv; charset=utf-8")],
        state.decision_table_csv(),
    )
        .into_response()
}

async fn run_audit(
    State(state): State<AppState>,
    body: Result<Json<AuditRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let req = json_body(body)?;
    let record = blocking(state, move |s| s.run_audit(req)).await?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn get_audit(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let r = state
        .audit(&id)
        .ok_or_else(|| ApiError::NotFound(format!("no audit `{id}`")))?;
    Ok(Json(r).into_response())
}

async fn verify(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let r = state
        .verify(&id)
        .ok_or_else(|| ApiError::NotFound(format!("no decision for `{id}`")))?;
    Ok(Json(r).into_response())
}
