//! HTTP client for a running service.

use futures::StreamExt;
use reactor_core::observability::SseDecoder;
use reactor_core::{Event, ToolDescriptor};

use crate::api::{ApiError, LAST_EVENT_ID};
use crate::engine::{Accepted, TaskSubmission, TaskView};

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:7070";

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request to {url} failed: {source}")]
    Transport { url: String, source: reqwest::Error },
    #[error("server replied {status}: {message}")]
    Status { status: u16, kind: String, message: String },
    #[error("undecodable reply: {0}")]
    Decode(String),
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base: impl Into<String>) -> Self {
        Self { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn send(&self, request: reqwest::RequestBuilder, url: &str) -> Result<reqwest::Response, ClientError> {
        let response = request.send().await.map_err(|source| ClientError::Transport { url: url.into(), source })?;
        if response.status().is_success() {
            return Ok(response);
        }
        let status = response.status().as_u16();
        let body = response.text().await.unwrap_or_default();
        let (kind, message) = match serde_json::from_str::<ApiError>(&body) {
            Ok(e) => (e.kind, e.error),
            Err(_) => (String::new(), body),
        };
        Err(ClientError::Status { status, kind, message })
    }

    async fn json<T: serde::de::DeserializeOwned>(response: reqwest::Response) -> Result<T, ClientError> {
        let bytes = response.bytes().await.map_err(|e| ClientError::Decode(e.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub async fn submit(&self, submission: &TaskSubmission) -> Result<Accepted, ClientError> {
        let url = self.url("/tasks");
        Self::json(self.send(self.http.post(&url).json(submission), &url).await?).await
    }

    pub async fn task(&self, id: &str) -> Result<TaskView, ClientError> {
        let url = self.url(&format!("/tasks/{id}"));
        Self::json(self.send(self.http.get(&url), &url).await?).await
    }

    pub async fn tasks(&self) -> Result<Vec<TaskView>, ClientError> {
        let url = self.url("/tasks");
        Self::json(self.send(self.http.get(&url), &url).await?).await
    }

    /// Follows a session's event stream from `from_seq` until the server
    /// closes it, calling `on_event` for each event in order.
    pub async fn follow(&self, id: &str, from_seq: u64, mut on_event: impl FnMut(Event)) -> Result<usize, ClientError> {
        let url = self.url(&format!("/tasks/{id}/events"));
        let request = self.http.get(&url).header(LAST_EVENT_ID, from_seq.to_string());
        let response = self.send(request, &url).await?;
        let mut decoder = SseDecoder::new();
        let mut body = response.bytes_stream();
        let mut seen = 0;
        while let Some(chunk) = body.next().await {
            let chunk = chunk.map_err(|source| ClientError::Transport { url: url.clone(), source })?;
            for frame in decoder.push(&chunk) {
                let event = frame.to_event().map_err(|e| ClientError::Decode(e.to_string()))?;
                on_event(event);
                seen += 1;
            }
        }
        Ok(seen)
    }

    pub async fn list_tools(&self) -> Result<Vec<ToolDescriptor>, ClientError> {
        let url = self.url("/registry/tools");
        Self::json(self.send(self.http.get(&url), &url).await?).await
    }

    pub async fn add_tool(&self, descriptor: &ToolDescriptor) -> Result<ToolDescriptor, ClientError> {
        let url = self.url("/registry/tools");
        Self::json(self.send(self.http.post(&url).json(descriptor), &url).await?).await
    }

    pub async fn remove_tool(&self, name: &str) -> Result<(), ClientError> {
        let url = self.url(&format!("/registry/tools/{name}"));
        self.send(self.http.delete(&url), &url).await.map(drop)
    }
}
