//! Language-model backends that produce planner turns.

mod http;
mod scripted;

use std::pin::Pin;

use async_trait::async_trait;
use futures::Stream;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpBackendConfig, API_KEY_ENV};
pub use scripted::{Script, ScriptStep, ScriptedBackend};

/// Stops generation before the model writes its own observations.
pub const DEFAULT_STOP_SEQUENCES: [&str; 2] = ["\nObservation:", "\nThought:"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub prompt: String,
    pub stop: Vec<String>,
    pub max_tokens: u32,
}

impl BackendRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), stop: DEFAULT_STOP_SEQUENCES.iter().map(|s| s.to_string()).collect(), max_tokens: 512 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Reported usage; callers estimate when absent.
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamChunk {
    Text(String),
    Usage(TokenUsage),
}

pub type TokenStream = Pin<Box<dyn Stream<Item = Result<StreamChunk, BackendError>> + Send>>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("script exhausted after {steps} steps")]
    Exhausted { steps: usize },
    #[error("script diverged at step {step}: prompt lacks {expected:?}")]
    Divergence { step: usize, expected: String },
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("backend transport: {0}")]
    Transport(String),
    #[error("backend timed out")]
    Timeout,
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("stream interrupted: {0}")]
    Interrupted(String),
}

impl BackendError {
    /// Whether a retry might succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Http { status, .. } => *status >= 500,
            BackendError::Transport(_) | BackendError::Timeout => true,
            _ => false,
        }
    }
}

#[async_trait]
pub trait PlannerBackend: Send + Sync {
    async fn complete(&self, request: &BackendRequest) -> Result<Completion, BackendError>;

    /// Token stream; the default yields the whole completion at once.
    async fn stream(&self, request: &BackendRequest) -> Result<TokenStream, BackendError> {
        let completion = self.complete(request).await?;
        let mut chunks = vec![Ok(StreamChunk::Text(completion.text))];
        if let Some(usage) = completion.usage {
            chunks.push(Ok(StreamChunk::Usage(usage)));
        }
        Ok(Box::pin(futures::stream::iter(chunks)))
    }
}

/// Cuts `text` at the earliest stop sequence.
pub fn apply_stop(text: &str, stop: &[String]) -> String {
    let cut = stop.iter().filter(|s| !s.is_empty()).filter_map(|s| text.find(s.as_str())).min();
    match cut {
        Some(i) => text[..i].to_string(),
        None => text.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_sequences_truncate() {
        let stop: Vec<String> = DEFAULT_STOP_SEQUENCES.iter().map(|s| s.to_string()).collect();
        assert_eq!(apply_stop("Thought: a\nAction: X()\nObservation: fake", &stop), "Thought: a\nAction: X()");
        assert_eq!(apply_stop("Final Answer: 4", &stop), "Final Answer: 4");
    }

    #[test]
    fn transient_errors() {
        assert!(BackendError::Http { status: 503, body: String::new() }.is_transient());
        assert!(!BackendError::Http { status: 401, body: String::new() }.is_transient());
        assert!(!BackendError::Exhausted { steps: 1 }.is_transient());
    }
}
