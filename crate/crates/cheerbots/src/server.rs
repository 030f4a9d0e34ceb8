//! HTTP front end of [`ChatService`].

use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::error::AppError;
use crate::service::{ChatService, ChatTurnPayload, TracePayload};

pub const SEED_ENV: &str = "CHEERBOT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub struct ApiError(AppError);

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            AppError::UnknownSession(_) => StatusCode::NOT_FOUND,
            AppError::EmptyMessage | AppError::Invalid(_) | AppError::Json { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ErrorBody { code: self.0.code().into(), message: self.0.to_string() };
        (status, Json(body)).into_response()
    }
}

async fn create_session(State(svc): State<Arc<ChatService>>) -> Json<SessionCreated> {
    Json(SessionCreated { session_id: svc.create_session() })
}

async fn post_message(
    State(svc): State<Arc<ChatService>>,
    Path(id): Path<String>,
    body: Result<Json<MessageRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<ChatTurnPayload>, ApiError> {
    let Json(req) = body.map_err(|e| AppError::Invalid(e.body_text()))?;
    let payload = tokio::task::spawn_blocking(move || svc.message(&id, &req.text))
        .await
        .map_err(|e| AppError::Invalid(format!("message task failed: {e}")))??;
    Ok(Json(payload))
}

async fn get_trace(State(svc): State<Arc<ChatService>>, Path(id): Path<String>) -> Result<Json<TracePayload>, ApiError> {
    Ok(Json(svc.trace(&id)?))
}

pub fn router(svc: Arc<ChatService>) -> Router {
    Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/{id}/message", post(post_message))
        .route("/api/session/{id}/trace", get(get_trace))
        .with_state(svc)
}

/// `CHEERBOT_SEED` when set and numeric, otherwise `fallback`.
pub fn seed_from_env(fallback: u64) -> Result<u64, AppError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| AppError::Invalid(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(fallback),
    }
}

/// Serves until the process is stopped, sweeping idle sessions once a minute.
pub async fn serve(svc: Arc<ChatService>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let sweeper = Arc::clone(&svc);
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            sweeper.sweep();
        }
    });
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(svc)).await
}
