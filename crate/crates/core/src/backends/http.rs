//! OpenAI-compatible text-completion backend.

use std::collections::VecDeque;
use std::pin::Pin;
use std::time::Duration;

use async_trait::async_trait;
use futures::{Stream, StreamExt};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, BackendRequest, Completion, PlannerBackend, StreamChunk, TokenStream, TokenUsage};
use crate::observability::SseDecoder;

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "REACTOR_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    /// Base URL; requests go to `<base_url>/completions`.
    pub base_url: String,
    pub model: String,
    pub temperature: Option<f32>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub retry_base_ms: u64,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "gpt-4o".into(),
            temperature: None,
            timeout_ms: 120_000,
            max_retries: 2,
            retry_base_ms: 250,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::Client,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct CompletionBody {
    #[serde(default)]
    choices: Vec<Choice>,
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
}

impl HttpBackend {
    /// Reads the API key from [`API_KEY_ENV`] if set.
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Ok(Self { config, client, api_key })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!("{}/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn body(&self, request: &BackendRequest, stream: bool) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "stop": request.stop,
            "stream": stream,
        });
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        body
    }

    async fn send_once(&self, body: &Value) -> Result<reqwest::Response, BackendError> {
        let mut req = self.client.post(self.url()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let response = req.send().await.map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = response.status();
        if status.is_success() {
            Ok(response)
        } else {
            let body = response.text().await.unwrap_or_default();
            Err(BackendError::Http { status: status.as_u16(), body: body.chars().take(500).collect() })
        }
    }

    /// Sends with jittered exponential backoff on transient failures.
    async fn send(&self, body: &Value) -> Result<reqwest::Response, BackendError> {
        let mut attempt = 0;
        loop {
            match self.send_once(body).await {
                Err(e) if e.is_transient() && attempt < self.config.max_retries => {
                    let base = self.config.retry_base_ms.saturating_mul(1 << attempt) as f64;
                    let jitter: f64 = rand::rng().random_range(0.5..1.5);
                    tracing::warn!(error = %e, attempt, "retrying completion request");
                    tokio::time::sleep(Duration::from_millis((base * jitter) as u64)).await;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

fn parse_chunk(data: &str) -> Result<Vec<StreamChunk>, BackendError> {
    let body: CompletionBody = serde_json::from_str(data).map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
    let mut out: Vec<StreamChunk> =
        body.choices.into_iter().map(|c| c.text).filter(|t| !t.is_empty()).map(StreamChunk::Text).collect();
    out.extend(body.usage.map(StreamChunk::Usage));
    Ok(out)
}

struct SseState {
    bytes: Pin<Box<dyn Stream<Item = Result<Vec<u8>, reqwest::Error>> + Send>>,
    decoder: SseDecoder,
    pending: VecDeque<Result<StreamChunk, BackendError>>,
    done: bool,
}

#[async_trait]
impl PlannerBackend for HttpBackend {
    async fn complete(&self, request: &BackendRequest) -> Result<Completion, BackendError> {
        let response = self.send(&self.body(request, false)).await?;
        let text = response.text().await.map_err(|e| BackendError::Transport(e.to_string()))?;
        let body: CompletionBody = serde_json::from_str(&text).map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        let choice = body.choices.into_iter().next().ok_or_else(|| BackendError::InvalidResponse("no choices".into()))?;
        Ok(Completion { text: choice.text, usage: body.usage })
    }

    async fn stream(&self, request: &BackendRequest) -> Result<TokenStream, BackendError> {
        let response = self.send(&self.body(request, true)).await?;
        let state = SseState {
            bytes: Box::pin(response.bytes_stream().map(|r| r.map(|b| b.to_vec()))),
            decoder: SseDecoder::new(),
            pending: VecDeque::new(),
            done: false,
        };
        let stream = futures::stream::unfold(state, |mut state| async move {
            loop {
                if let Some(item) = state.pending.pop_front() {
                    return Some((item, state));
                }
                if state.done {
                    return None;
                }
                match state.bytes.next().await {
                    Some(Ok(bytes)) => {
                        for frame in state.decoder.push(&bytes) {
                            if frame.data.trim() == "[DONE]" {
                                state.done = true;
                                break;
                            }
                            match parse_chunk(&frame.data) {
                                Ok(chunks) => state.pending.extend(chunks.into_iter().map(Ok)),
                                Err(e) => {
                                    state.pending.push_back(Err(e));
                                    state.done = true;
                                    break;
                                }
                            }
                        }
                    }
                    Some(Err(e)) => {
                        state.pending.push_back(Err(BackendError::Interrupted(e.to_string())));
                        state.done = true;
                    }
                    None => {
                        state.pending.push_back(Err(BackendError::Interrupted("stream ended before [DONE]".into())));
                        state.done = true;
                    }
                }
            }
        });
        Ok(Box::pin(stream))
    }
}
