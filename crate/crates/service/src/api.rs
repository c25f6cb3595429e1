//! HTTP routes.
//!
//! | method | path                     |                                    |
//! |--------|--------------------------|------------------------------------|
//! | POST   | `/tasks`                 | submit; 202 with the session id    |
//! | GET    | `/tasks`                 | every session's status             |
//! | GET    | `/tasks/{id}`            | status, answer, cost               |
//! | GET    | `/tasks/{id}/events`     | SSE; `Last-Event-ID` is `from_seq` |
//! | GET    | `/registry/tools`        | descriptors                        |
//! | POST   | `/registry/tools`        | register a descriptor              |
//! | GET    | `/registry/tools/{name}` | one descriptor                     |
//! | DELETE | `/registry/tools/{name}` | deregister                         |

use std::convert::Infallible;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::StreamExt;
use reactor_core::observability::serialize_sse;
use reactor_core::registry::{RegistryError, ToolStatus};
use reactor_core::ToolDescriptor;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, SubmitError, TaskSubmission};

pub const LAST_EVENT_ID: &str = "last-event-id";

/// Error body of every non-2xx reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: String,
    pub error: String,
}

pub struct ApiFailure(StatusCode, ApiError);

impl ApiFailure {
    fn new(status: StatusCode, kind: &str, error: impl Into<String>) -> Self {
        Self(status, ApiError { kind: kind.into(), error: error.into() })
    }

    fn validation(error: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", error)
    }

    fn not_found(error: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", error)
    }
}

impl IntoResponse for ApiFailure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<SubmitError> for ApiFailure {
    fn from(e: SubmitError) -> Self {
        match e {
            SubmitError::Invalid(msg) => ApiFailure::validation(msg),
            busy @ SubmitError::Busy { .. } => ApiFailure::new(StatusCode::SERVICE_UNAVAILABLE, "busy", busy.to_string()),
        }
    }
}

impl From<RegistryError> for ApiFailure {
    fn from(e: RegistryError) -> Self {
        let message = e.to_string();
        match e {
            RegistryError::DuplicateName(_) => ApiFailure::new(StatusCode::CONFLICT, "conflict", message),
            RegistryError::NotFound(_) => ApiFailure::not_found(message),
            RegistryError::InvalidDescriptor { .. } | RegistryError::Config(_) => ApiFailure::validation(message),
            RegistryError::Unavailable { .. } | RegistryError::CapacityExhausted { .. } => {
                ApiFailure::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", message)
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiFailure>;

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiFailure::validation(format!("malformed body: {e}")))
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/tasks", get(list_tasks).post(submit_task))
        .route("/tasks/{id}", get(task_status))
        .route("/tasks/{id}/events", get(task_events))
        .route("/registry/tools", get(list_tools).post(register_tool))
        .route("/registry/tools/{name}", get(get_tool).delete(deregister_tool))
        .with_state(engine)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    engine: Arc<Engine>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(engine)).with_graceful_shutdown(shutdown).await
}

async fn submit_task(State(engine): State<Arc<Engine>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let submission: TaskSubmission = parse_json(&body)?;
    let accepted = engine.submit(submission)?;
    Ok((StatusCode::ACCEPTED, [(header::LOCATION, accepted.status_url.clone())], Json(accepted)))
}

async fn list_tasks(State(engine): State<Arc<Engine>>) -> impl IntoResponse {
    Json(engine.views())
}

async fn task_status(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    engine.view(&id).map(Json).ok_or_else(|| ApiFailure::not_found(format!("no session `{id}`")))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    from: Option<u64>,
}

async fn task_events(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    Query(query): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let from_header = match headers.get(LAST_EVENT_ID) {
        Some(value) => Some(
            value
                .to_str()
                .ok()
                .and_then(|v| v.trim().parse::<u64>().ok())
                .ok_or_else(|| ApiFailure::validation("Last-Event-ID must be a sequence number"))?,
        ),
        None => None,
    };
    let from = from_header.or(query.from).unwrap_or(0);
    let subscription = engine.events().subscribe(&id, from).map_err(|e| ApiFailure::not_found(e.to_string()))?;
    let frames = subscription.into_stream().map(|event| Ok::<_, Infallible>(Bytes::from(serialize_sse(&event))));
    Ok(Response::builder()
        .status(StatusCode::OK)
        .header(header::CONTENT_TYPE, "text/event-stream")
        .header(header::CACHE_CONTROL, "no-cache")
        .body(Body::from_stream(frames))
        .expect("static response parts"))
}

async fn list_tools(State(engine): State<Arc<Engine>>) -> impl IntoResponse {
    Json(engine.registry().list_tools())
}

async fn get_tool(State(engine): State<Arc<Engine>>, Path(name): Path<String>) -> ApiResult<Json<ToolDescriptor>> {
    engine
        .registry()
        .descriptor(&name)
        .filter(|d| d.status != ToolStatus::Removed)
        .map(Json)
        .ok_or_else(|| RegistryError::NotFound(name).into())
}

async fn register_tool(State(engine): State<Arc<Engine>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let descriptor: ToolDescriptor = parse_json(&body)?;
    let name = descriptor.name.clone();
    engine.registry().register_tool(descriptor)?;
    let stored = engine.registry().descriptor(&name).ok_or_else(|| RegistryError::NotFound(name.clone()))?;
    Ok((StatusCode::CREATED, [(header::LOCATION, format!("/registry/tools/{name}"))], Json(stored)))
}

async fn deregister_tool(State(engine): State<Arc<Engine>>, Path(name): Path<String>) -> ApiResult<StatusCode> {
    engine.registry().deregister_tool(&name)?;
    Ok(StatusCode::NO_CONTENT)
}
