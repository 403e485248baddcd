//! JSON-over-HTTP front end for [`SessionStore`].

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use crowdcause::design::Criterion;
use crowdcause::expert::Protocol;
use crowdcause::graph::{asia_network_file, NetworkFile};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::session::{SessionError, SessionSpec};
use crate::store::SessionStore;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
    /// Shared bearer token; requests are open when unset.
    pub token: Option<String>,
}

pub struct ApiError(SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0 {
            SessionError::UnknownSession(_) => StatusCode::NOT_FOUND,
            SessionError::NoPendingQuery => StatusCode::CONFLICT,
            SessionError::SessionExhausted => StatusCode::GONE,
            SessionError::OutOfRange { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::InvalidBudget(_)
            | SessionError::InvalidNetwork(_)
            | SessionError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            SessionError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = Json(json!({ "error_code": self.0.code(), "message": self.0.to_string() }));
        (status, body).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Deserialize)]
#[serde(untagged)]
enum NetworkField {
    Fixture(String),
    Inline(NetworkFile),
}

#[derive(Deserialize)]
struct CreateRequest {
    network: NetworkField,
    protocol: Protocol,
    criterion: Criterion,
    budget: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
struct AnswerRequest {
    value: Value,
}

fn body<T: serde::de::DeserializeOwned>(
    payload: Result<Json<Value>, JsonRejection>,
) -> ApiResult<T> {
    let Json(v) = payload.map_err(|e| SessionError::InvalidRequest(e.body_text()))?;
    serde_json::from_value(v).map_err(|e| SessionError::InvalidRequest(e.to_string()).into())
}

async fn create(
    State(app): State<AppState>,
    payload: Result<Json<Value>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: CreateRequest = body(payload)?;
    let network = match req.network {
        NetworkField::Fixture(name) if name.eq_ignore_ascii_case("asia") => asia_network_file(),
        NetworkField::Fixture(name) => {
            return Err(SessionError::InvalidNetwork(format!("unknown fixture `{name}`")).into());
        }
        NetworkField::Inline(file) => file,
    };
    let id = app.store.create(SessionSpec {
        network,
        protocol: req.protocol,
        criterion: req.criterion,
        budget: req.budget,
        seed: req.seed,
    })?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

async fn info(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(app.store.info(&id)?)))
}

async fn next_query(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(app.store.next_query(&id)?)))
}

async fn respond(
    State(app): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<Value>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req: AnswerRequest = body(payload)?;
    let value = req.value.as_i64().ok_or_else(|| {
        SessionError::InvalidRequest(format!("value must be an integer, got {}", req.value))
    })?;
    let summary = app.store.submit(&id, value)?;
    Ok(Json(json!({ "estimate_summary": summary })))
}

async fn estimate(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(app.store.estimate(&id)?)))
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn require_token(State(app): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.token {
        let expected = format!("Bearer {token}");
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|h| h.to_str().ok())
            .is_some_and(|h| h == expected);
        if !ok {
            let body = Json(
                json!({ "error_code": "Unauthorized", "message": "missing or wrong bearer token" }),
            );
            return (StatusCode::UNAUTHORIZED, body).into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(info))
        .route("/sessions/{id}/next-query", get(next_query))
        .route("/sessions/{id}/responses", post(respond))
        .route("/sessions/{id}/estimate", get(estimate))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .route("/health", get(health))
        .with_state(state)
}

/// Binds `addr` and serves until the process stops.
pub async fn serve(addr: &str, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
