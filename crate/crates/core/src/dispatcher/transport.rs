//! How calls reach tools: in-process handlers behind `local://` endpoints,
//! or JSON over HTTP.

use std::collections::HashMap;
use std::future::Future;
use std::sync::{Arc, OnceLock, RwLock};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

/// Payload sent to a tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRequest {
    pub tool: String,
    pub args: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment: Option<AttachmentPayload>,
}

impl ToolRequest {
    pub fn payload_chars(&self) -> usize {
        serde_json::to_string(self).map(|s| s.chars().count()).unwrap_or(0)
    }

    pub fn arg_str(&self, name: &str) -> Option<&str> {
        self.args.get(name).and_then(serde_json::Value::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachmentPayload {
    pub name: String,
    pub pages: Vec<PagePayload>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PagePayload {
    pub page: usize,
    pub text: String,
}

/// Wire reply: `{"result": ...}` or `{"error": {"message": ...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ToolReply {
    Ok { result: serde_json::Value },
    Err { error: ToolErrorBody },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolErrorBody {
    pub message: String,
}

impl From<Result<String, String>> for ToolReply {
    fn from(value: Result<String, String>) -> Self {
        match value {
            Ok(text) => ToolReply::Ok { result: serde_json::Value::String(text) },
            Err(message) => ToolReply::Err { error: ToolErrorBody { message } },
        }
    }
}

impl ToolReply {
    pub fn into_result(self) -> Result<String, String> {
        match self {
            ToolReply::Ok { result: serde_json::Value::String(s) } => Ok(s),
            ToolReply::Ok { result } => Ok(result.to_string()),
            ToolReply::Err { error } => Err(error.message),
        }
    }
}

/// Executes a tool call, returning its text result or an error message.
#[async_trait]
pub trait ToolHandler: Send + Sync {
    async fn call(&self, request: ToolRequest) -> Result<String, String>;
}

struct FnHandler<F>(F);

#[async_trait]
impl<F, Fut> ToolHandler for FnHandler<F>
where
    F: Fn(ToolRequest) -> Fut + Send + Sync,
    Fut: Future<Output = Result<String, String>> + Send,
{
    async fn call(&self, request: ToolRequest) -> Result<String, String> {
        (self.0)(request).await
    }
}

/// Wraps an async closure as a handler.
pub fn handler_fn<F, Fut>(f: F) -> Arc<dyn ToolHandler>
where
    F: Fn(ToolRequest) -> Fut + Send + Sync + 'static,
    Fut: Future<Output = Result<String, String>> + Send + 'static,
{
    Arc::new(FnHandler(f))
}

/// POSTs the request as JSON to `url`.
pub struct HttpToolHandler {
    client: reqwest::Client,
    url: String,
}

impl HttpToolHandler {
    pub fn new(client: reqwest::Client, url: impl Into<String>) -> Self {
        Self { client, url: url.into() }
    }
}

#[async_trait]
impl ToolHandler for HttpToolHandler {
    async fn call(&self, request: ToolRequest) -> Result<String, String> {
        let response = self.client.post(&self.url).json(&request).send().await.map_err(|e| format!("transport: {e}"))?;
        let status = response.status();
        let body = response.text().await.map_err(|e| format!("transport: {e}"))?;
        if !status.is_success() {
            return match serde_json::from_str::<ToolReply>(&body) {
                Ok(ToolReply::Err { error }) => Err(error.message),
                _ => Err(format!("HTTP {}: {}", status.as_u16(), body.chars().take(200).collect::<String>())),
            };
        }
        serde_json::from_str::<ToolReply>(&body).map_err(|e| format!("invalid tool reply: {e}"))?.into_result()
    }
}

/// Maps descriptor endpoints to handlers.
pub struct ToolHost {
    local: RwLock<HashMap<String, Arc<dyn ToolHandler>>>,
    /// Built on first HTTP use; construction loads the system trust store.
    client: OnceLock<reqwest::Client>,
}

impl Default for ToolHost {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for ToolHost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let local = self.local.read().expect("host lock");
        f.debug_struct("ToolHost").field("local", &local.keys().collect::<Vec<_>>()).finish()
    }
}

impl ToolHost {
    pub fn new() -> Self {
        Self { local: RwLock::new(HashMap::new()), client: OnceLock::new() }
    }

    /// Serves `endpoint` (e.g. `local://pdf`) in-process.
    pub fn mount(&self, endpoint: impl Into<String>, handler: Arc<dyn ToolHandler>) {
        self.local.write().expect("host lock").insert(endpoint.into(), handler);
    }

    pub fn unmount(&self, endpoint: &str) -> bool {
        self.local.write().expect("host lock").remove(endpoint).is_some()
    }

    pub fn resolve(&self, endpoint: &str) -> Option<Arc<dyn ToolHandler>> {
        if let Some(handler) = self.local.read().expect("host lock").get(endpoint) {
            return Some(handler.clone());
        }
        if endpoint.starts_with("http://") || endpoint.starts_with("https://") {
            return Some(Arc::new(HttpToolHandler::new(self.client.get_or_init(reqwest::Client::new).clone(), endpoint)));
        }
        None
    }
}
