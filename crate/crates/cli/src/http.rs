//! HTTP+JSON surface over [`Service`].

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::Value;

use vdss_core::service::{parse_body, ErrorBody, Service, ServiceError};

#[derive(Clone)]
struct AppState {
    service: Service,
    token: Option<String>,
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0 {
            ServiceError::NotFound { .. } => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::BadRequest { .. } => StatusCode::BAD_REQUEST,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody::from(&self.0))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok<T: serde::Serialize>(status: StatusCode, body: T) -> ApiResult {
    Ok((status, Json(serde_json::to_value(body).expect("payload serializes"))).into_response())
}

/// Service calls may run agents and touch the log, so they leave the
/// async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
        .map_err(ApiError)
}

async fn start_cycle(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req = parse_body(&body)?;
    let view = blocking(move || s.service.start_cycle(&id, req)).await?;
    ok(StatusCode::ACCEPTED, view)
}

async fn review(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    ok(StatusCode::OK, blocking(move || s.service.get_pending_review(&id)).await?)
}

async fn feedback(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let sub = parse_body(&body)?;
    ok(StatusCode::OK, blocking(move || s.service.submit_feedback(&id, sub)).await?)
}

async fn trail(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    ok(StatusCode::OK, blocking(move || s.service.trail(&id)).await?)
}

async fn preferences(State(s): State<AppState>, Path(d): Path<String>) -> ApiResult {
    ok(StatusCode::OK, blocking(move || s.service.preferences(&d)).await?)
}

async fn regret(State(s): State<AppState>, Path(d): Path<String>) -> ApiResult {
    ok(StatusCode::OK, blocking(move || s.service.regret(&d)).await?)
}

async fn load_dataset(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let req = parse_body(&body)?;
    ok(StatusCode::OK, blocking(move || s.service.load_dataset(req)).await?)
}

async fn fallback() -> ApiError {
    ApiError(ServiceError::NotFound {
        what: "route",
        id: "requested path".into(),
    })
}

async fn require_token(State(s): State<AppState>, req: Request, next: Next) -> Response {
    let Some(token) = &s.token else {
        return next.run(req).await;
    };
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(token.as_str()) {
        next.run(req).await
    } else {
        let body = ErrorBody {
            code: "unauthorized".into(),
            message: "missing or wrong bearer token".into(),
            path: None,
        };
        (StatusCode::UNAUTHORIZED, Json(body)).into_response()
    }
}

/// All routes. With `token` set, every request needs `Authorization: Bearer <token>`.
pub fn router(service: Service, token: Option<String>) -> Router {
    let state = AppState { service, token };
    Router::new()
        .route("/encounters/:id/cycles", post(start_cycle))
        .route("/cycles/:id/review", get(review))
        .route("/cycles/:id/feedback", post(feedback))
        .route("/cycles/:id/trail", get(trail))
        .route("/clinicians/:d/preferences", get(preferences))
        .route("/clinicians/:d/regret", get(regret))
        .route("/datasets/load", post(load_dataset))
        .route("/health", get(|| async { Json(Value::String("ok".into())) }))
        .fallback(fallback)
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}
