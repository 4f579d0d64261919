//! HTTP API over the run engine: dataset upload, treatment previews, run
//! submission, polling, cancellation and result retrieval under `/api/v1`.
//!
//! All JSON bodies are canonical (sorted keys, compact), so results fetched
//! here are byte-identical to the files the CLI writes.

mod error;
mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use psmw_core::canonical;
use psmw_core::engine::{EngineConfig, EngineError, RunEngine};
use psmw_core::{dsl, DatasetSchema, RunManifest};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use error::ApiError;
pub use store::{DatasetInfo, DatasetStore, InsertError};

pub const BODY_LIMIT: usize = 256 * 1024 * 1024;
pub const OPENAPI: &str = include_str!("../openapi.yaml");

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Holds `datasets/` and `runs/`.
    pub root: PathBuf,
    pub workers: usize,
    pub threads: Option<usize>,
    /// Allowed browser origin; `None` allows any.
    pub cors_origin: Option<String>,
}

impl ServiceConfig {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), workers: 1, threads: None, cors_origin: None }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub engine: RunEngine,
    pub datasets: Arc<DatasetStore>,
    cors_origin: Option<String>,
}

impl AppState {
    pub fn open(config: ServiceConfig) -> Result<Self, EngineError> {
        let datasets = DatasetStore::open(&config.root).map_err(|e| EngineError::Io(e.to_string()))?;
        let engine = RunEngine::start(EngineConfig {
            root: config.root,
            workers: config.workers,
            threads: config.threads,
        })?;
        Ok(Self { engine, datasets: Arc::new(datasets), cors_origin: config.cors_origin })
    }
}

pub(crate) fn json_response<T: Serialize + ?Sized>(status: StatusCode, body: &T) -> Response {
    match canonical::to_string(body) {
        Ok(text) => raw_json(status, text),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

fn raw_json(status: StatusCode, text: String) -> Response {
    (status, [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], text).into_response()
}

pub fn router(state: AppState) -> Router {
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let cors = match state.cors_origin.as_deref().map(HeaderValue::from_str) {
        Some(Ok(origin)) => cors.allow_origin(AllowOrigin::exact(origin)),
        _ => cors.allow_origin(Any),
    };
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/openapi.yaml", get(openapi))
        .route("/api/v1/datasets", post(upload_dataset).get(list_datasets))
        .route("/api/v1/datasets/{id}", get(get_dataset))
        .route("/api/v1/datasets/{id}/schema", get(get_schema))
        .route("/api/v1/datasets/{id}/treatment-preview", post(treatment_preview))
        .route("/api/v1/runs", post(submit_run).get(list_runs))
        .route("/api/v1/runs/{id}", get(get_run))
        .route("/api/v1/runs/{id}/results", get(get_results))
        .route("/api/v1/runs/{id}/diagnostics", get(get_diagnostics))
        .route("/api/v1/runs/{id}/cancel", post(cancel_run))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(cors)
        .with_state(state)
}

/// Serves until Ctrl-C, then stops the engine workers.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let engine = state.engine.clone();
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    engine.shutdown();
    Ok(())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))
}

async fn health() -> Response {
    json_response(StatusCode::OK, &serde_json::json!({ "status": "ok" }))
}

async fn openapi() -> Response {
    ([(header::CONTENT_TYPE, "application/yaml")], OPENAPI).into_response()
}

async fn upload_dataset(State(state): State<AppState>, mut form: Multipart) -> Result<Response, ApiError> {
    let multipart_err = |e: axum::extract::multipart::MultipartError| {
        let status = e.status();
        let code = if status == StatusCode::PAYLOAD_TOO_LARGE { "payload_too_large" } else { "bad_request" };
        ApiError::new(status, code, e.body_text())
    };
    let (mut data, mut schema) = (None, None);
    while let Some(field) = form.next_field().await.map_err(multipart_err)? {
        match field.name() {
            Some("data") => data = Some(field.bytes().await.map_err(multipart_err)?),
            Some("schema") => schema = Some(field.bytes().await.map_err(multipart_err)?),
            _ => {}
        }
    }
    let mut missing = ApiError::bad_request("multipart body needs `data` and `schema` parts");
    if data.is_none() {
        missing = missing.with_field("data", "required");
    }
    if schema.is_none() {
        missing = missing.with_field("schema", "required");
    }
    let (Some(data), Some(schema)) = (data, schema) else { return Err(missing) };
    let utf8 = |field: &str, b: Bytes| {
        String::from_utf8(b.to_vec()).map_err(|_| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_dataset", format!("`{field}` is not UTF-8"))
                .with_field(field, "not UTF-8")
        })
    };
    let data = utf8("data", data)?;
    let schema = DatasetSchema::from_json(&utf8("schema", schema)?).map_err(ApiError::dataset)?;
    let store = Arc::clone(&state.datasets);
    match blocking(move || store.insert(&data, schema)).await? {
        Ok(info) => Ok(json_response(StatusCode::CREATED, &info)),
        Err(InsertError::Dataset(e)) => Err(ApiError::dataset(e)),
        Err(InsertError::Io(e)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", e)),
    }
}

async fn list_datasets(State(state): State<AppState>) -> Response {
    json_response(StatusCode::OK, &state.datasets.list())
}

fn dataset_info(state: &AppState, id: &str) -> Result<DatasetInfo, ApiError> {
    state.datasets.info(id).ok_or_else(|| ApiError::not_found(format!("dataset `{id}` not found")))
}

async fn get_dataset(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(json_response(StatusCode::OK, &dataset_info(&state, &id)?))
}

async fn get_schema(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(json_response(StatusCode::OK, &dataset_info(&state, &id)?.schema))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PreviewRequest {
    expression: String,
}

#[derive(Serialize)]
struct PreviewResponse {
    expression: String,
    n_treated: usize,
    n_control: usize,
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.to_string()).with_field("body", e.to_string())
    })
}

async fn treatment_preview(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let data = state.datasets.get(&id).ok_or_else(|| ApiError::not_found(format!("dataset `{id}` not found")))?;
    let req: PreviewRequest = parse_body(&body)?;
    let expr = dsl::parse(&req.expression).map_err(ApiError::dsl)?;
    let assignment = blocking(move || dsl::assign(&expr, &data)).await?.map_err(ApiError::dsl)?;
    Ok(json_response(
        StatusCode::OK,
        &PreviewResponse {
            expression: assignment.expression,
            n_treated: assignment.n_treated,
            n_control: assignment.n_control,
        },
    ))
}

async fn submit_run(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("body is not UTF-8"))?;
    let manifest = RunManifest::from_json(text).map_err(|e| ApiError::from(EngineError::Invalid(e)))?;
    let invalid = |msg: String| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_manifest", format!("invalid manifest: dataset: {msg}"))
            .with_field("dataset", msg)
    };
    let dataset_id = manifest.dataset.clone().ok_or_else(|| invalid("required".into()))?;
    let data = state.datasets.get(&dataset_id).ok_or_else(|| invalid(format!("unknown dataset `{dataset_id}`")))?;
    let engine = state.engine.clone();
    let state = blocking(move || engine.submit(manifest, data).and_then(|id| engine.poll(&id))).await??;
    Ok(json_response(StatusCode::ACCEPTED, &state))
}

async fn list_runs(State(state): State<AppState>) -> Response {
    json_response(StatusCode::OK, &state.engine.list())
}

async fn get_run(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(json_response(StatusCode::OK, &state.engine.poll(&id)?))
}

async fn get_results(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(raw_json(StatusCode::OK, state.engine.fetch_results(&id)?))
}

async fn get_diagnostics(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let text = state.engine.fetch_results(&id)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(json_response(StatusCode::OK, &value["diagnostics"]))
}

async fn cancel_run(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(json_response(StatusCode::OK, &state.engine.cancel(&id)?))
}
