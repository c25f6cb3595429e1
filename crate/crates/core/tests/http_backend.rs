use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use futures::StreamExt;
use reactor_core::backends::{BackendError, BackendRequest, HttpBackend, HttpBackendConfig, PlannerBackend, StreamChunk, TokenUsage};
use serde_json::{json, Value};

#[derive(Clone, Default)]
struct Fake {
    hits: Arc<AtomicUsize>,
    fail_first: usize,
    fail_status: u16,
    bodies: Arc<Mutex<Vec<Value>>>,
    auth: Arc<Mutex<Vec<Option<String>>>>,
    truncate_stream: bool,
}

async fn completions(State(fake): State<Fake>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let n = fake.hits.fetch_add(1, Ordering::SeqCst);
    fake.bodies.lock().unwrap().push(body.clone());
    fake.auth.lock().unwrap().push(headers.get("authorization").map(|v| v.to_str().unwrap().to_string()));
    if n < fake.fail_first {
        return (StatusCode::from_u16(fake.fail_status).unwrap(), "upstream sad").into_response();
    }
    if body["stream"] == json!(true) {
        let pieces = ["Thought: split\n", "Action: A(x=1)", " && B()"];
        let mut sse = String::new();
        for p in pieces {
            sse.push_str(&format!("data: {}\r\n\r\n", json!({"choices": [{"text": p}]})));
        }
        sse.push_str(&format!("data: {}\n\n", json!({"choices": [], "usage": {"prompt_tokens": 7, "completion_tokens": 9}})));
        if !fake.truncate_stream {
            sse.push_str("data: [DONE]\n\n");
        }
        return Response::builder().header("content-type", "text/event-stream").body(Body::from(sse)).unwrap();
    }
    Json(json!({"choices": [{"text": "Final Answer: 42"}], "usage": {"prompt_tokens": 12, "completion_tokens": 5}})).into_response()
}

async fn serve(fake: Fake) -> String {
    let app = Router::new().route("/v1/completions", post(completions)).with_state(fake);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/v1")
}

fn backend(base_url: String) -> HttpBackend {
    let config = HttpBackendConfig { base_url, retry_base_ms: 5, temperature: Some(0.0), ..Default::default() };
    HttpBackend::new(config).unwrap().with_api_key(Some("sk-test".into()))
}

#[tokio::test]
async fn completes_and_reports_usage() {
    let fake = Fake::default();
    let b = backend(serve(fake.clone()).await);
    let done = b.complete(&BackendRequest::new("Task: x")).await.unwrap();
    assert_eq!(done.text, "Final Answer: 42");
    assert_eq!(done.usage, Some(TokenUsage { prompt_tokens: 12, completion_tokens: 5 }));
    let body = fake.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["prompt"], "Task: x");
    assert_eq!(body["stop"], json!(["\nObservation:", "\nThought:"]));
    assert_eq!(body["temperature"], json!(0.0));
    assert_eq!(fake.auth.lock().unwrap()[0].as_deref(), Some("Bearer sk-test"));
}

#[tokio::test]
async fn retries_server_errors_twice() {
    let fake = Fake { fail_first: 2, fail_status: 503, ..Default::default() };
    let b = backend(serve(fake.clone()).await);
    assert!(b.complete(&BackendRequest::new("p")).await.is_ok());
    assert_eq!(fake.hits.load(Ordering::SeqCst), 3);

    let fake = Fake { fail_first: 3, fail_status: 500, ..Default::default() };
    let b = backend(serve(fake.clone()).await);
    let err = b.complete(&BackendRequest::new("p")).await.unwrap_err();
    assert!(matches!(err, BackendError::Http { status: 500, .. }));
    assert_eq!(fake.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let fake = Fake { fail_first: 1, fail_status: 401, ..Default::default() };
    let b = backend(serve(fake.clone()).await);
    assert!(matches!(b.complete(&BackendRequest::new("p")).await, Err(BackendError::Http { status: 401, .. })));
    assert_eq!(fake.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn transport_failures_surface_after_retries() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let b = backend(format!("http://{addr}/v1"));
    assert!(matches!(b.complete(&BackendRequest::new("p")).await, Err(BackendError::Transport(_))));
}

#[tokio::test]
async fn streams_text_deltas() {
    let fake = Fake::default();
    let b = backend(serve(fake.clone()).await);
    let chunks: Vec<_> = b.stream(&BackendRequest::new("p")).await.unwrap().collect().await;
    let mut text = String::new();
    let mut usage = None;
    for c in chunks {
        match c.unwrap() {
            StreamChunk::Text(t) => text.push_str(&t),
            StreamChunk::Usage(u) => usage = Some(u),
        }
    }
    assert_eq!(text, "Thought: split\nAction: A(x=1) && B()");
    assert_eq!(usage, Some(TokenUsage { prompt_tokens: 7, completion_tokens: 9 }));
    assert_eq!(fake.bodies.lock().unwrap()[0]["stream"], json!(true));
}

#[tokio::test]
async fn truncated_streams_report_interruption() {
    let fake = Fake { truncate_stream: true, ..Default::default() };
    let b = backend(serve(fake).await);
    let chunks: Vec<_> = b.stream(&BackendRequest::new("p")).await.unwrap().collect().await;
    assert!(matches!(chunks.last(), Some(Err(BackendError::Interrupted(_)))));
    assert!(matches!(chunks[0], Ok(StreamChunk::Text(_))));
}
