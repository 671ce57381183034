//! HTTP surface.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::pipeline::{Engine, UnderstandError, UnderstandRequest};
use crate::domain::SCHEMA_VERSION;

pub const UNDERSTAND_PATH: &str = "/v1/query/understand";
pub const HEALTH_PATH: &str = "/v1/health";
pub const METRICS_PATH: &str = "/v1/metrics";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub backend: String,
    pub taxonomy_version: String,
    pub schema_version: String,
}

fn error(status: StatusCode, kind: &str, message: String) -> Response {
    (status, Json(json!({ "error": { "kind": kind, "message": message } }))).into_response()
}

impl IntoResponse for UnderstandError {
    fn into_response(self) -> Response {
        match &self {
            UnderstandError::InvalidInput(_) => error(StatusCode::BAD_REQUEST, "invalid_input", self.to_string()),
            UnderstandError::BudgetExhausted { .. } => {
                error(StatusCode::GATEWAY_TIMEOUT, "budget_exhausted", self.to_string())
            }
        }
    }
}

async fn understand(
    State(engine): State<Arc<Engine>>,
    body: Result<Json<UnderstandRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(rej) => return error(StatusCode::BAD_REQUEST, "invalid_input", rej.body_text()),
    };
    match engine.understand(&req).await {
        Ok(result) => Json(result).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn health(State(engine): State<Arc<Engine>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        backend: engine.backend_name().to_string(),
        taxonomy_version: engine.taxonomy().version().to_string(),
        schema_version: SCHEMA_VERSION.to_string(),
    })
}

async fn metrics(State(engine): State<Arc<Engine>>) -> Response {
    Json(engine.latency().snapshot()).into_response()
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route(UNDERSTAND_PATH, post(understand))
        .route(HEALTH_PATH, get(health))
        .route(METRICS_PATH, get(metrics))
        .with_state(engine)
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve_on<F>(listener: tokio::net::TcpListener, engine: Arc<Engine>, shutdown: F) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(engine)).with_graceful_shutdown(shutdown).await
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(addr: &str, engine: Arc<Engine>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local: SocketAddr = listener.local_addr()?;
    tracing::info!(%local, "listening");
    serve_on(listener, engine, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
