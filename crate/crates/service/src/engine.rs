//! The shared engine behind the HTTP API and the CLI: one registry, tool
//! host, dispatcher and event hub multiplexed over many sessions.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use base64::Engine as _;
use reactor_core::backends::HttpBackend;
use reactor_core::registry::RegistryError;
use reactor_core::{
    Attachment, CostSummary, Dispatcher, EventHub, Orchestrator, PlannerBackend, Registry, Script, ScriptedBackend,
    SessionOutcome, SessionState, SessionStatus, ToolHost,
};
use reactor_harness::fakes::{self, FakeLog};
use reactor_harness::golden::{mount_document_tools, GoldenOptions};
use serde::{Deserialize, Serialize};
use tokio::sync::{watch, Semaphore};

use crate::config::{BackendSelection, BackendSettings, BuiltinTools, ServiceConfig};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("trace directory: {0}")]
    TraceDir(std::io::Error),
    #[error("loading tools: {0}")]
    Tools(RegistryError),
    #[error("backend: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmitError {
    #[error("{0}")]
    Invalid(String),
    #[error("engine is at its limit of {limit} concurrent sessions")]
    Busy { limit: usize },
}

/// One uploaded document. Exactly one of `pages`, `text` (pages split at
/// form feeds) or `base64` (UTF-8 text, split the same way) is given.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttachmentUpload {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pages: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base64: Option<String>,
}

pub const PAGE_BREAK: char = '\u{c}';

pub fn split_pages(text: &str) -> Vec<String> {
    let text = text.strip_suffix(PAGE_BREAK).unwrap_or(text);
    text.split(PAGE_BREAK).map(str::to_string).collect()
}

impl AttachmentUpload {
    pub fn from_pages(name: impl Into<String>, pages: Vec<String>) -> Self {
        Self { name: name.into(), pages: Some(pages), ..Default::default() }
    }

    pub fn into_attachment(self) -> Result<Attachment, String> {
        let pages = match (self.pages, self.text, self.base64) {
            (Some(pages), None, None) => pages,
            (None, Some(text), None) => split_pages(&text),
            (None, None, Some(encoded)) => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(encoded.trim())
                    .map_err(|e| format!("attachment `{}`: bad base64: {e}", self.name))?;
                let text = String::from_utf8(bytes).map_err(|_| format!("attachment `{}` is not UTF-8 text", self.name))?;
                split_pages(&text)
            }
            _ => return Err(format!("attachment `{}` needs exactly one of pages, text or base64", self.name)),
        };
        Ok(Attachment::new(self.name, pages))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSubmission {
    pub task: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<AttachmentUpload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_turns: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendSelection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accepted {
    pub session_id: String,
    pub status_url: String,
    pub events_url: String,
}

/// What `GET /tasks/{id}` reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub session_id: String,
    pub task: String,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub turns: u32,
    pub forced_final: bool,
    pub cost: CostSummary,
    pub elapsed_ms: u64,
}

impl TaskView {
    fn new(task: &str, outcome: SessionOutcome) -> Self {
        let done = outcome.status == SessionStatus::Done;
        let failed = outcome.status == SessionStatus::Failed;
        Self {
            session_id: outcome.session_id,
            task: task.to_string(),
            status: outcome.status,
            answer: outcome.answer.filter(|_| done),
            error: outcome.failure.filter(|_| failed),
            turns: outcome.turns,
            forced_final: outcome.forced_final,
            cost: outcome.cost,
            elapsed_ms: outcome.elapsed_ms,
        }
    }
}

enum DefaultBackend {
    Shared(Arc<dyn PlannerBackend>),
    /// Scripts are stateful, so each session replays its own copy.
    Script(Script),
}

pub struct Engine {
    config: ServiceConfig,
    events: Arc<EventHub>,
    host: Arc<ToolHost>,
    orchestrator: Orchestrator,
    default_backend: DefaultBackend,
    sessions: Mutex<HashMap<String, watch::Receiver<TaskView>>>,
    permits: Arc<Semaphore>,
    next_id: AtomicU64,
}

fn build_backend(selection: &BackendSelection) -> Result<Arc<dyn PlannerBackend>, String> {
    Ok(match selection {
        BackendSelection::Http(config) => Arc::new(HttpBackend::new(config.clone()).map_err(|e| e.to_string())?),
        BackendSelection::Scripted { script } => Arc::new(ScriptedBackend::new(script.clone())),
    })
}

impl Engine {
    pub fn new(config: ServiceConfig) -> Result<Arc<Self>, EngineError> {
        let events = Arc::new(match &config.trace_dir {
            Some(dir) => EventHub::with_trace_dir(dir).map_err(EngineError::TraceDir)?,
            None => EventHub::new(),
        });
        let registry = Arc::new(Registry::with_events(events.clone()));
        let host = Arc::new(ToolHost::new());
        if config.builtin_tools.contains(&BuiltinTools::Documents) {
            mount_document_tools(&registry, &host, fakes::financial_report(), FakeLog::new(), &GoldenOptions::default());
        }
        if let Some(path) = &config.tools {
            registry.load_config_file(path).map_err(EngineError::Tools)?;
        }
        let default_backend = match &config.backend {
            BackendSettings::Http(http) => DefaultBackend::Shared(
                build_backend(&BackendSelection::Http(http.clone())).map_err(EngineError::Backend)?,
            ),
            BackendSettings::Scripted { script } => DefaultBackend::Script(
                Script::from_file(script).map_err(|e| EngineError::Backend(format!("{}: {e}", script.display())))?,
            ),
        };
        let placeholder: Arc<dyn PlannerBackend> = Arc::new(ScriptedBackend::new(Script::default()));
        let dispatcher =
            Dispatcher::new(registry, host.clone(), config.limits.dispatcher_config()).with_events(events.clone());
        let orchestrator = Orchestrator::new(Arc::new(dispatcher), events.clone(), placeholder);
        Ok(Arc::new(Self {
            permits: Arc::new(Semaphore::new(config.limits.max_sessions)),
            config,
            events,
            host,
            orchestrator,
            default_backend,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(0),
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn registry(&self) -> &Arc<Registry> {
        self.orchestrator.registry()
    }

    pub fn host(&self) -> &Arc<ToolHost> {
        &self.host
    }

    pub fn events(&self) -> &Arc<EventHub> {
        &self.events
    }

    /// Sessions currently holding a slot.
    pub fn active_sessions(&self) -> usize {
        self.config.limits.max_sessions - self.permits.available_permits()
    }

    /// Validates and starts a session. Slot, id and status entry are taken
    /// before this returns, so the session is visible to every reader.
    pub fn submit(&self, submission: TaskSubmission) -> Result<Accepted, SubmitError> {
        let task = submission.task.trim().to_string();
        if task.is_empty() {
            return Err(SubmitError::Invalid("task text is empty".into()));
        }
        let mut names = std::collections::HashSet::new();
        let mut attachments = Vec::with_capacity(submission.attachments.len());
        for upload in submission.attachments {
            if upload.name.trim().is_empty() {
                return Err(SubmitError::Invalid("attachment name is empty".into()));
            }
            if !names.insert(upload.name.clone()) {
                return Err(SubmitError::Invalid(format!("duplicate attachment `{}`", upload.name)));
            }
            attachments.push(upload.into_attachment().map_err(SubmitError::Invalid)?);
        }
        let mut session_config = self.config.session.clone();
        if let Some(max_turns) = submission.max_turns {
            if max_turns == 0 {
                return Err(SubmitError::Invalid("max_turns must be at least 1".into()));
            }
            session_config.max_turns = max_turns;
        }
        let backend = match (&submission.backend, &self.default_backend) {
            (Some(selection), _) => build_backend(selection).map_err(SubmitError::Invalid)?,
            (None, DefaultBackend::Shared(backend)) => backend.clone(),
            (None, DefaultBackend::Script(script)) => Arc::new(ScriptedBackend::new(script.clone())),
        };

        let permit = self
            .permits
            .clone()
            .try_acquire_owned()
            .map_err(|_| SubmitError::Busy { limit: self.config.limits.max_sessions })?;
        let id = format!("task-{}", self.next_id.fetch_add(1, Ordering::Relaxed) + 1);
        let mut session = SessionState::new(&id, &task, attachments, session_config);
        let (tx, rx) = watch::channel(TaskView::new(&task, session.outcome()));
        self.events.open(&id);
        self.sessions.lock().expect("sessions lock").insert(id.clone(), rx);

        let orchestrator = self.orchestrator.with_backend(backend);
        tokio::spawn(async move {
            while !session.status.is_terminal() {
                orchestrator.run_turn(&mut session).await;
                if session.status == SessionStatus::AwaitingResults {
                    tx.send_replace(TaskView::new(&task, session.outcome()));
                    orchestrator.await_results(&mut session).await;
                }
                tx.send_replace(TaskView::new(&task, session.outcome()));
            }
            let outcome = orchestrator.run_session(&mut session).await;
            tracing::info!(session = %outcome.session_id, status = ?outcome.status, "session ended");
            drop(permit);
            tx.send_replace(TaskView::new(&task, outcome));
        });

        Ok(Accepted { status_url: format!("/tasks/{id}"), events_url: format!("/tasks/{id}/events"), session_id: id })
    }

    pub fn view(&self, id: &str) -> Option<TaskView> {
        self.sessions.lock().expect("sessions lock").get(id).map(|rx| rx.borrow().clone())
    }

    /// Views of every session, oldest first.
    pub fn views(&self) -> Vec<TaskView> {
        let sessions = self.sessions.lock().expect("sessions lock");
        let mut views: Vec<TaskView> = sessions.values().map(|rx| rx.borrow().clone()).collect();
        views.sort_by_key(|v| v.session_id.trim_start_matches("task-").parse::<u64>().unwrap_or(u64::MAX));
        views
    }

    /// Waits for a session to end.
    pub async fn wait(&self, id: &str) -> Option<TaskView> {
        let mut rx = self.sessions.lock().expect("sessions lock").get(id)?.clone();
        let view = rx.wait_for(|v| v.status.is_terminal()).await.ok()?.clone();
        Some(view)
    }
}
