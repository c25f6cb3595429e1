//! Ordered per-session event streams with persistence, fan-out and replay.
//!
//! Every stream has a single writer. Each emitted event gets the next `seq`,
//! is appended to the in-memory history and (when a trace directory is
//! configured) to `<session_id>.ndjson`, then offered to every live
//! subscriber. Subscribers that fall more than [`SUBSCRIBER_BUFFER`] events
//! behind are disconnected rather than slowing the writer.

mod event;
mod sse;

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::Utc;
use futures::Stream;
use thiserror::Error;
use tokio::sync::mpsc;

pub use event::{Event, EventType};
pub use sse::{parse_sse, serialize_sse, SseDecoder, SseFrame};

pub const SUBSCRIBER_BUFFER: usize = 1024;

#[derive(Debug, Error)]
pub enum ObservabilityError {
    #[error("no event stream for session `{0}`")]
    NotFound(String),
    #[error("trace file {path}: {source}")]
    Trace { path: PathBuf, source: std::io::Error },
    #[error("trace file {path} line {line}: {source}")]
    Corrupt { path: PathBuf, line: usize, source: serde_json::Error },
}

#[derive(Debug, Default)]
struct StreamState {
    events: Vec<Event>,
    subscribers: Vec<mpsc::Sender<Event>>,
    finished: bool,
    trace: Option<File>,
}

#[derive(Debug)]
pub struct EventHub {
    streams: Mutex<HashMap<String, Arc<Mutex<StreamState>>>>,
    trace_dir: Option<PathBuf>,
    buffer: usize,
}

impl Default for EventHub {
    fn default() -> Self {
        Self::new()
    }
}

impl EventHub {
    /// In-memory hub without trace files.
    pub fn new() -> Self {
        Self { streams: Mutex::default(), trace_dir: None, buffer: SUBSCRIBER_BUFFER }
    }

    /// Hub that also persists each stream to `<dir>/<session_id>.ndjson`.
    pub fn with_trace_dir(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { streams: Mutex::default(), trace_dir: Some(dir), buffer: SUBSCRIBER_BUFFER })
    }

    pub fn with_subscriber_buffer(mut self, buffer: usize) -> Self {
        self.buffer = buffer.max(1);
        self
    }

    pub fn trace_path(&self, session_id: &str) -> Option<PathBuf> {
        self.trace_dir.as_ref().map(|d| d.join(format!("{session_id}.ndjson")))
    }

    fn stream(&self, session_id: &str) -> Arc<Mutex<StreamState>> {
        let mut streams = self.streams.lock().expect("hub lock");
        streams
            .entry(session_id.to_string())
            .or_insert_with(|| {
                let trace = self.trace_path(session_id).and_then(|path| {
                    OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(&path)
                        .map_err(|e| tracing::warn!(path = %path.display(), error = %e, "cannot open trace file"))
                        .ok()
                });
                Arc::new(Mutex::new(StreamState { trace, ..StreamState::default() }))
            })
            .clone()
    }

    /// Creates the stream if it does not exist yet.
    pub fn open(&self, session_id: &str) {
        self.stream(session_id);
    }

    pub fn contains(&self, session_id: &str) -> bool {
        self.streams.lock().expect("hub lock").contains_key(session_id)
    }

    /// Appends an event to the session's stream and fans it out.
    pub fn emit(&self, session_id: &str, event_type: EventType, content: impl Into<serde_json::Value>) -> Event {
        let stream = self.stream(session_id);
        let mut state = stream.lock().expect("stream lock");
        let event = Event {
            session_id: session_id.to_string(),
            seq: state.events.len() as u64,
            event_type,
            content: content.into(),
            timestamp: Utc::now(),
        };
        if let Some(file) = state.trace.as_mut() {
            let mut line = serde_json::to_string(&event).expect("event serializes");
            line.push('\n');
            if let Err(e) = file.write_all(line.as_bytes()) {
                tracing::warn!(session = session_id, error = %e, "trace write failed");
            }
        }
        state.subscribers.retain(|tx| match tx.try_send(event.clone()) {
            Ok(()) => true,
            Err(mpsc::error::TrySendError::Full(_)) => {
                tracing::warn!(session = session_id, "disconnecting slow subscriber");
                false
            }
            Err(mpsc::error::TrySendError::Closed(_)) => false,
        });
        state.events.push(event.clone());
        event
    }

    /// Marks the stream complete; live subscribers end after draining.
    pub fn finish(&self, session_id: &str) {
        let stream = self.stream(session_id);
        let mut state = stream.lock().expect("stream lock");
        state.finished = true;
        state.subscribers.clear();
        if let Some(file) = state.trace.as_mut() {
            let _ = file.flush();
        }
    }

    pub fn is_finished(&self, session_id: &str) -> bool {
        let streams = self.streams.lock().expect("hub lock");
        streams.get(session_id).is_some_and(|s| s.lock().expect("stream lock").finished)
    }

    /// Events with `seq >= from_seq` recorded so far.
    pub fn history(&self, session_id: &str, from_seq: u64) -> Result<Vec<Event>, ObservabilityError> {
        if let Some(stream) = self.streams.lock().expect("hub lock").get(session_id).cloned() {
            let state = stream.lock().expect("stream lock");
            return Ok(state.events.iter().skip(from_seq as usize).cloned().collect());
        }
        let path = self.trace_path(session_id).filter(|p| p.exists());
        match path {
            Some(path) => Ok(read_trace(&path)?.into_iter().filter(|e| e.seq >= from_seq).collect()),
            None => Err(ObservabilityError::NotFound(session_id.to_string())),
        }
    }

    /// History from `from_seq`, then the live tail until the stream
    /// finishes. Backlog and live registration happen under one lock, so the
    /// sequence has no gap and no duplicate.
    pub fn subscribe(&self, session_id: &str, from_seq: u64) -> Result<Subscription, ObservabilityError> {
        let stream = self.streams.lock().expect("hub lock").get(session_id).cloned();
        let Some(stream) = stream else {
            // Known only from its trace file: a finished session.
            let backlog = self.history(session_id, from_seq)?;
            return Ok(Subscription { backlog: backlog.into(), live: None });
        };
        let mut state = stream.lock().expect("stream lock");
        let backlog: VecDeque<Event> = state.events.iter().skip(from_seq as usize).cloned().collect();
        let live = if state.finished {
            None
        } else {
            let (tx, rx) = mpsc::channel(self.buffer);
            state.subscribers.push(tx);
            Some(rx)
        };
        Ok(Subscription { backlog, live })
    }

    /// Drops the in-memory copy of a finished stream. Replay then falls back
    /// to the trace file, if any.
    pub fn evict(&self, session_id: &str) -> bool {
        let mut streams = self.streams.lock().expect("hub lock");
        match streams.get(session_id) {
            Some(s) if s.lock().expect("stream lock").finished => {
                streams.remove(session_id);
                true
            }
            _ => false,
        }
    }
}

/// Reads a persisted NDJSON trace.
pub fn read_trace(path: &Path) -> Result<Vec<Event>, ObservabilityError> {
    let file = File::open(path).map_err(|source| ObservabilityError::Trace { path: path.to_path_buf(), source })?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ObservabilityError::Trace { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line)
            .map_err(|source| ObservabilityError::Corrupt { path: path.to_path_buf(), line: i + 1, source })?;
        events.push(event);
    }
    Ok(events)
}

/// Replay-then-live event reader.
#[derive(Debug)]
pub struct Subscription {
    backlog: VecDeque<Event>,
    live: Option<mpsc::Receiver<Event>>,
}

impl Subscription {
    pub async fn next(&mut self) -> Option<Event> {
        if let Some(event) = self.backlog.pop_front() {
            return Some(event);
        }
        match self.live.as_mut() {
            Some(rx) => rx.recv().await,
            None => None,
        }
    }

    pub fn into_stream(self) -> impl Stream<Item = Event> + Send + 'static {
        futures::stream::unfold(self, |mut sub| async move { sub.next().await.map(|e| (e, sub)) })
    }

    /// Collects everything until the stream ends.
    pub async fn collect(mut self) -> Vec<Event> {
        let mut out = Vec::new();
        while let Some(e) = self.next().await {
            out.push(e);
        }
        out
    }
}
