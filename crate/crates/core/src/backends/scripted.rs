//! Deterministic backend that replays a script of responses.

use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{apply_stop, BackendError, BackendRequest, Completion, PlannerBackend, StreamChunk, TokenStream, TokenUsage};
use crate::cost::estimate_tokens;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    /// Substrings the prompt must contain for this step to apply.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expect: Vec<String>,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
}

impl ScriptStep {
    pub fn new(response: impl Into<String>) -> Self {
        Self { expect: Vec::new(), response: response.into(), usage: None }
    }

    pub fn expecting(mut self, needle: impl Into<String>) -> Self {
        self.expect.push(needle.into());
        self
    }

    pub fn with_usage(mut self, prompt_tokens: u64, completion_tokens: u64) -> Self {
        self.usage = Some(TokenUsage { prompt_tokens, completion_tokens });
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub steps: Vec<ScriptStep>,
    /// Characters per streamed chunk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_chars: Option<usize>,
    /// Delay before each streamed chunk, in milliseconds.
    #[serde(default)]
    pub chunk_delay_ms: u64,
}

impl Script {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        Self { steps, chunk_chars: None, chunk_delay_ms: 0 }
    }

    /// Accepts `{"steps": [...]}` or a bare array of steps.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Form {
            Full(Script),
            Steps(Vec<ScriptStep>),
        }
        Ok(match serde_json::from_str(text)? {
            Form::Full(script) => script,
            Form::Steps(steps) => Script::new(steps),
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Replays a [`Script`] one step per call, checking each prompt against the
/// step's expectations.
#[derive(Debug)]
pub struct ScriptedBackend {
    script: Script,
    cursor: Mutex<usize>,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        Self { script, cursor: Mutex::new(0), prompts: Mutex::new(Vec::new()) }
    }

    pub fn from_responses<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self::new(Script::new(responses.into_iter().map(ScriptStep::new).collect()))
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    /// A new backend over the same script, starting from the first step.
    pub fn restarted(&self) -> Self {
        Self::new(self.script.clone())
    }

    pub fn steps_used(&self) -> usize {
        *self.cursor.lock().expect("cursor lock")
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompt lock").clone()
    }

    fn next_step(&self, request: &BackendRequest) -> Result<Completion, BackendError> {
        let mut cursor = self.cursor.lock().expect("cursor lock");
        let step = self.script.steps.get(*cursor).ok_or(BackendError::Exhausted { steps: self.script.steps.len() })?;
        self.prompts.lock().expect("prompt lock").push(request.prompt.clone());
        if let Some(missing) = step.expect.iter().find(|e| !request.prompt.contains(e.as_str())) {
            return Err(BackendError::Divergence { step: *cursor, expected: missing.clone() });
        }
        *cursor += 1;
        let text = apply_stop(&step.response, &request.stop);
        let usage = step.usage.unwrap_or(TokenUsage {
            prompt_tokens: estimate_tokens(&request.prompt),
            completion_tokens: estimate_tokens(&text),
        });
        Ok(Completion { text, usage: Some(usage) })
    }
}

fn chunk_text(text: &str, size: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    chars.chunks(size.max(1)).map(|c| c.iter().collect()).collect()
}

#[async_trait]
impl PlannerBackend for ScriptedBackend {
    async fn complete(&self, request: &BackendRequest) -> Result<Completion, BackendError> {
        self.next_step(request)
    }

    async fn stream(&self, request: &BackendRequest) -> Result<TokenStream, BackendError> {
        let completion = self.next_step(request)?;
        let size = self.script.chunk_chars.unwrap_or(8);
        let delay = Duration::from_millis(self.script.chunk_delay_ms);
        let mut items: Vec<StreamChunk> = chunk_text(&completion.text, size).into_iter().map(StreamChunk::Text).collect();
        items.extend(completion.usage.map(StreamChunk::Usage));
        let stream = futures::stream::unfold(items.into_iter(), move |mut rest| async move {
            let item = rest.next()?;
            if !delay.is_zero() && matches!(item, StreamChunk::Text(_)) {
                tokio::time::sleep(delay).await;
            }
            Some((Ok(item), rest))
        });
        Ok(Box::pin(stream))
    }
}
