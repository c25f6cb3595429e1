use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    Thought,
    Action,
    Result,
    Error,
    FinalAnswer,
    RegistryChanged,
    Quarantine,
    DroppedResult,
}

impl EventType {
    pub const ALL: [EventType; 8] = [
        EventType::Thought,
        EventType::Action,
        EventType::Result,
        EventType::Error,
        EventType::FinalAnswer,
        EventType::RegistryChanged,
        EventType::Quarantine,
        EventType::DroppedResult,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::Thought => "thought",
            EventType::Action => "action",
            EventType::Result => "result",
            EventType::Error => "error",
            EventType::FinalAnswer => "final_answer",
            EventType::RegistryChanged => "registry_changed",
            EventType::Quarantine => "quarantine",
            EventType::DroppedResult => "dropped_result",
        }
    }

    /// Whether events of this type mirror scratchpad entries.
    pub fn is_transcript(self) -> bool {
        matches!(
            self,
            EventType::Thought | EventType::Action | EventType::Result | EventType::Error | EventType::FinalAnswer
        )
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventType::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| format!("unknown event type `{s}`"))
    }
}

/// One observability record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub session_id: String,
    pub seq: u64,
    pub event_type: EventType,
    pub content: serde_json::Value,
    pub timestamp: DateTime<Utc>,
}

impl Event {
    /// Content as text: strings verbatim, structured payloads' `content`
    /// field when present, otherwise compact JSON.
    pub fn text(&self) -> String {
        match &self.content {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Object(map) => match map.get("content") {
                Some(serde_json::Value::String(s)) => s.clone(),
                _ => self.content.to_string(),
            },
            other => other.to_string(),
        }
    }
}
