//! HTTP inference service.
//!
//! * `GET /health` returns status and model version.
//! * `GET /tasks` lists tasks with their stored thresholds.
//! * `POST /predict` takes PNG/PPM bytes, raw or as a multipart file field.
//!   Query parameters `threshold_<task>=<p>` override stored thresholds.

mod predictor;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use predictor::{PredictionResponse, Predictor, TaskPrediction};

pub const DEFAULT_BODY_LIMIT: usize = 16 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("not a readable image: {0}")]
    Decode(String),
    #[error("request body exceeds the {0} byte limit")]
    TooLarge(usize),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::Decode(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::TooLarge(_) => StatusCode::PAYLOAD_TOO_LARGE,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Internal(_) | ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub body_limit: usize,
    /// Allowed CORS origin; any origin when unset.
    pub cors_origin: Option<String>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            body_limit: DEFAULT_BODY_LIMIT,
            cors_origin: None,
        }
    }
}

#[derive(Clone)]
struct AppState {
    predictor: Arc<Predictor>,
    body_limit: usize,
}

pub fn router(predictor: Arc<Predictor>, config: &ServeConfig) -> Result<Router, ServiceError> {
    let cors = match &config.cors_origin {
        Some(origin) => {
            let value = HeaderValue::from_str(origin)
                .map_err(|_| ServiceError::BadRequest(format!("bad CORS origin `{origin}`")))?;
            CorsLayer::new().allow_origin(AllowOrigin::exact(value))
        }
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    let state = AppState {
        predictor,
        body_limit: config.body_limit,
    };
    Ok(Router::new()
        .route("/health", get(health))
        .route("/tasks", get(tasks))
        .route("/predict", post(predict))
        .layer(DefaultBodyLimit::max(config.body_limit))
        .layer(cors)
        .with_state(state))
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "model_version": state.predictor.checkpoint().model_version }))
}

async fn tasks(State(state): State<AppState>) -> Json<serde_json::Value> {
    let ck = state.predictor.checkpoint();
    let tasks: Vec<_> = ck
        .task_names()
        .iter()
        .zip(&ck.thresholds)
        .enumerate()
        .map(|(i, (name, t))| json!({ "index": i, "name": name, "threshold": t }))
        .collect();
    Json(json!({
        "model_version": ck.model_version,
        "input_size": ck.model.config().input_size,
        "tasks": tasks,
    }))
}

fn threshold_overrides(
    task_names: &[String],
    query: &HashMap<String, String>,
) -> Result<Vec<Option<f64>>, ServiceError> {
    let mut out = vec![None; task_names.len()];
    for (key, value) in query {
        let task = key
            .strip_prefix("threshold_")
            .and_then(|name| task_names.iter().position(|n| n == name))
            .ok_or_else(|| ServiceError::BadRequest(format!("unknown query parameter `{key}`")))?;
        let t: f64 = value
            .parse()
            .ok()
            .filter(|t| (0.0..=1.0).contains(t))
            .ok_or_else(|| ServiceError::BadRequest(format!("`{key}` must be a number in [0, 1]")))?;
        out[task] = Some(t);
    }
    Ok(out)
}

async fn read_body(state: &AppState, request: Request) -> Result<Bytes, ServiceError> {
    let multipart = request
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let limit = state.body_limit;
    if multipart {
        let mut form = Multipart::from_request(request, state)
            .await
            .map_err(|e| ServiceError::BadRequest(e.body_text()))?;
        loop {
            match form.next_field().await {
                Ok(Some(field)) => {
                    if field.file_name().is_none() && field.name() != Some("file") {
                        continue;
                    }
                    return field.bytes().await.map_err(|e| match e.status() {
                        StatusCode::PAYLOAD_TOO_LARGE => ServiceError::TooLarge(limit),
                        _ => ServiceError::BadRequest(e.body_text()),
                    });
                }
                Ok(None) => return Err(ServiceError::BadRequest("multipart body has no file field".into())),
                Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => return Err(ServiceError::TooLarge(limit)),
                Err(e) => return Err(ServiceError::BadRequest(e.body_text())),
            }
        }
    } else {
        Bytes::from_request(request, state).await.map_err(|e| match e.status() {
            StatusCode::PAYLOAD_TOO_LARGE => ServiceError::TooLarge(limit),
            _ => ServiceError::BadRequest(e.body_text()),
        })
    }
}

async fn predict(
    State(state): State<AppState>,
    Query(query): Query<HashMap<String, String>>,
    request: Request,
) -> Result<Json<PredictionResponse>, ServiceError> {
    let overrides = threshold_overrides(state.predictor.task_names(), &query)?;
    let bytes = read_body(&state, request).await?;
    let predictor = state.predictor.clone();
    let response = tokio::task::spawn_blocking(move || predictor.predict_bytes(&bytes, &overrides))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(Json(response))
}

/// Self-tests the model, then serves until Ctrl-C.
pub async fn serve(predictor: Predictor, addr: SocketAddr, config: ServeConfig) -> Result<(), ServiceError> {
    predictor.self_test()?;
    let app = router(Arc::new(predictor), &config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
