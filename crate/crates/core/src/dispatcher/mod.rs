//! Executes validated calls: capacity leasing, deadlines, failure tracking,
//! minimal-context payloads and ordered result collection.

mod faults;
mod privacy;
mod quarantine;
mod transport;

use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{oneshot, Semaphore};
use tokio::task::JoinHandle;
use tokio::time::Instant;

pub use faults::{FaultInjector, SeededFaults};
pub use privacy::{
    enforce_minimal_context, parse_pages, select_attachment, Attachment, AuditRecord, PrivacyAudit, PrivacyViolation,
};
pub use quarantine::{FailureTracker, QuarantinePolicy};
pub use transport::{
    handler_fn, AttachmentPayload, HttpToolHandler, PagePayload, ToolErrorBody, ToolHandler, ToolHost, ToolReply, ToolRequest,
};

use crate::action::{CallMode, GroupId};
use crate::cost::estimate_tokens;
use crate::observability::{EventHub, EventType};
use crate::registry::{Registry, RegistryError, ToolStatus, ValidatedAction};

#[derive(Debug, Clone, PartialEq)]
pub struct DispatcherConfig {
    /// Deadline for tools whose descriptor sets none.
    pub default_timeout: Duration,
    /// Calls executing at once across all tools.
    pub worker_limit: usize,
    /// Runs every call one at a time (the sequential baseline).
    pub sequential: bool,
    pub quarantine: QuarantinePolicy,
    /// How long a timed-out call may keep running, holding its lease, before
    /// it is dropped.
    pub abandon_grace: Duration,
}

impl Default for DispatcherConfig {
    fn default() -> Self {
        Self {
            default_timeout: Duration::from_secs(30),
            worker_limit: 32,
            sequential: false,
            quarantine: QuarantinePolicy::default(),
            abandon_grace: Duration::from_secs(5),
        }
    }
}

/// One call ready for execution.
#[derive(Debug, Clone)]
pub struct DispatchRequest {
    pub session_id: String,
    /// Position among the session's dispatches, used by fault injection.
    pub sequence: u64,
    pub action: ValidatedAction,
    pub attachments: Arc<Vec<Attachment>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Ok { text: String },
    Timeout { after_ms: u64 },
    ToolError { message: String },
    Unavailable { reason: String },
    CapacityExhausted { queued: usize },
    /// Refused before sending, e.g. by the minimal-context check.
    Rejected { reason: String },
}

impl Outcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, Outcome::Ok { .. })
    }

    /// Failures that count toward quarantine.
    pub fn is_tool_failure(&self) -> bool {
        matches!(self, Outcome::Timeout { .. } | Outcome::ToolError { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Ok { .. } => "ok",
            Outcome::Timeout { .. } => "timeout",
            Outcome::ToolError { .. } => "tool_error",
            Outcome::Unavailable { .. } => "unavailable",
            Outcome::CapacityExhausted { .. } => "capacity_exhausted",
            Outcome::Rejected { .. } => "rejected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchResult {
    pub group: GroupId,
    pub tool: String,
    pub mode: CallMode,
    pub outcome: Outcome,
    #[serde(with = "millis")]
    pub elapsed: Duration,
    /// Estimated tokens exchanged with the tool.
    pub tokens: u64,
}

impl DispatchResult {
    /// Text for the planner's transcript: `Ok(observation)` or `Err(error)`.
    /// An unavailable tool reads as an observation so the planner can
    /// replan around it.
    pub fn transcript_text(&self) -> Result<String, String> {
        match &self.outcome {
            Outcome::Ok { text } => Ok(text.clone()),
            Outcome::Unavailable { .. } => Ok(format!("{}: tool unavailable", self.tool)),
            Outcome::Timeout { after_ms } => Err(format!("{} timed out after {after_ms} ms", self.tool)),
            Outcome::ToolError { message } => Err(format!("{} failed: {message}", self.tool)),
            Outcome::CapacityExhausted { queued } => Err(format!("{} is at capacity ({queued} calls queued)", self.tool)),
            Outcome::Rejected { reason } => Err(format!("{} call rejected: {reason}", self.tool)),
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

pub struct Dispatcher {
    registry: Arc<Registry>,
    host: Arc<ToolHost>,
    events: Option<Arc<EventHub>>,
    config: DispatcherConfig,
    workers: Arc<Semaphore>,
    tracker: Mutex<FailureTracker>,
    faults: RwLock<Option<Arc<dyn FaultInjector>>>,
    audit: PrivacyAudit,
}

impl std::fmt::Debug for Dispatcher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dispatcher").field("config", &self.config).field("host", &self.host).finish_non_exhaustive()
    }
}

impl Dispatcher {
    pub fn new(registry: Arc<Registry>, host: Arc<ToolHost>, config: DispatcherConfig) -> Self {
        let workers = if config.sequential { 1 } else { config.worker_limit.max(1) };
        Self {
            registry,
            host,
            events: None,
            tracker: Mutex::new(FailureTracker::new(config.quarantine)),
            workers: Arc::new(Semaphore::new(workers)),
            config,
            faults: RwLock::new(None),
            audit: PrivacyAudit::default(),
        }
    }

    pub fn with_events(mut self, events: Arc<EventHub>) -> Self {
        self.events = Some(events);
        self
    }

    pub fn with_faults(self, faults: Arc<dyn FaultInjector>) -> Self {
        self.set_faults(Some(faults));
        self
    }

    pub fn set_faults(&self, faults: Option<Arc<dyn FaultInjector>>) {
        *self.faults.write().expect("faults lock") = faults;
    }

    pub fn config(&self) -> &DispatcherConfig {
        &self.config
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn host(&self) -> &Arc<ToolHost> {
        &self.host
    }

    pub fn audit(&self) -> &PrivacyAudit {
        &self.audit
    }

    /// Runs a group concurrently (subject to capacity) and returns one result
    /// per request, in request order.
    pub async fn dispatch_group(&self, requests: Vec<DispatchRequest>) -> Vec<DispatchResult> {
        futures::future::join_all(requests.into_iter().map(|r| self.dispatch(r))).await
    }

    /// Runs a call on its own task.
    pub fn spawn(self: &Arc<Self>, request: DispatchRequest) -> JoinHandle<DispatchResult> {
        let this = self.clone();
        tokio::spawn(async move { this.dispatch(request).await })
    }

    pub async fn dispatch(&self, request: DispatchRequest) -> DispatchResult {
        let started = Instant::now();
        let (outcome, tokens) = self.execute(&request).await;
        let tool = request.action.tool().to_string();
        if outcome.is_tool_failure() || outcome.is_ok() {
            self.track(&request, &tool, outcome.is_tool_failure());
        }
        tracing::debug!(tool = %tool, outcome = outcome.label(), "dispatched");
        DispatchResult {
            group: request.action.group(),
            tool,
            mode: request.action.mode(),
            outcome,
            elapsed: started.elapsed(),
            tokens,
        }
    }

    fn track(&self, request: &DispatchRequest, tool: &str, failed: bool) {
        let now = Instant::now();
        let until = self.tracker.lock().expect("tracker lock").record(tool, failed, now);
        let Some(until) = until else { return };
        let _ = self.registry.quarantine(tool, until);
        if let Some(events) = &self.events {
            let cooldown_ms = until.saturating_duration_since(now).as_millis() as u64;
            events.emit(
                &request.session_id,
                EventType::Quarantine,
                json!({ "tool": tool, "cooldown_ms": cooldown_ms, "failures": self.config.quarantine.threshold }),
            );
        }
    }

    async fn execute(&self, request: &DispatchRequest) -> (Outcome, u64) {
        let tool = request.action.tool();
        let unavailable = |reason: String| (Outcome::Unavailable { reason }, 0);
        let Some(descriptor) = self.registry.descriptor(tool) else {
            return unavailable("not registered".into());
        };
        if descriptor.status != ToolStatus::Available {
            return unavailable(format!("{:?}", descriptor.status).to_lowercase());
        }
        let wire = match enforce_minimal_context(&descriptor, &request.action, &request.attachments) {
            Ok(wire) => wire,
            Err(violation) => return (Outcome::Rejected { reason: violation.to_string() }, 0),
        };
        let lease = match self.registry.lease_capacity(tool) {
            Ok(grant) => grant.into_lease().await,
            Err(RegistryError::CapacityExhausted { queued, .. }) => return (Outcome::CapacityExhausted { queued }, 0),
            Err(e) => return unavailable(e.to_string()),
        };
        let permit = self.workers.clone().acquire_owned().await.expect("worker pool open");
        match self.registry.descriptor(tool).map(|d| d.status) {
            Some(ToolStatus::Available) => {}
            _ => return unavailable("removed while queued".into()),
        }
        let Some(handler) = self.host.resolve(&descriptor.endpoint) else {
            return (Outcome::ToolError { message: format!("no handler for endpoint `{}`", descriptor.endpoint) }, 0);
        };
        self.audit.record(&request.session_id, &descriptor, &wire);

        let request_tokens = estimate_tokens(&serde_json::to_string(&wire).unwrap_or_default());
        let deadline = descriptor.timeout_ms.map(Duration::from_millis).unwrap_or(self.config.default_timeout);
        let (tx, rx) = oneshot::channel();
        let events = self.events.clone();
        let (session, group, name) = (request.session_id.clone(), request.action.group(), tool.to_string());
        let grace = self.config.abandon_grace;
        tokio::spawn(async move {
            let _held = (lease, permit);
            let result = tokio::time::timeout(deadline + grace, handler.call(wire)).await;
            let dropped = match result {
                Ok(result) => tx.send(result).err().map(|r| json!({ "tool": name, "group": group, "late": true, "ok": r.is_ok() })),
                Err(_) => Some(json!({ "tool": name, "group": group, "late": false, "abandoned": true })),
            };
            if let (Some(content), Some(events)) = (dropped, events) {
                events.emit(&session, EventType::DroppedResult, content);
            }
        });

        let raw = match tokio::time::timeout(deadline, rx).await {
            Ok(Ok(raw)) => raw,
            Ok(Err(_)) => Err("tool task ended without a result".to_string()),
            Err(_) => return (Outcome::Timeout { after_ms: deadline.as_millis() as u64 }, request_tokens),
        };
        match raw {
            Ok(text) => {
                let tokens = request_tokens + estimate_tokens(&text);
                let injected = self.faults.read().expect("faults lock").as_ref().and_then(|f| f.inject(&request.session_id, request.sequence, tool));
                match injected {
                    Some(message) => (Outcome::ToolError { message }, tokens),
                    None => (Outcome::Ok { text }, tokens),
                }
            }
            Err(message) => (Outcome::ToolError { message }, request_tokens),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{Action, ArgValue, Argument};
    use crate::registry::{validate_against, Locality, ParamSpec, SemanticType, ToolDescriptor, TypeSignature};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn request(registry: &Registry, tool: &str, seq: u64, args: Vec<Argument>) -> DispatchRequest {
        let descriptor = registry.descriptor(tool).unwrap();
        let mut action = Action::new(tool, args);
        action.group = GroupId(seq);
        DispatchRequest {
            session_id: "s".into(),
            sequence: seq,
            action: validate_against(&action, &descriptor.signature).unwrap(),
            attachments: Arc::new(vec![]),
        }
    }

    fn sleeper(ms: u64) -> Arc<dyn ToolHandler> {
        handler_fn(move |req: ToolRequest| async move {
            tokio::time::sleep(Duration::from_millis(ms)).await;
            Ok(format!("{} done", req.tool))
        })
    }

    fn setup(tools: &[(&str, usize, u64)]) -> (Arc<Registry>, Arc<ToolHost>) {
        let registry = Arc::new(Registry::new());
        let host = Arc::new(ToolHost::new());
        for (name, parallel, ms) in tools {
            let endpoint = format!("local://{name}");
            registry.register_tool(ToolDescriptor::new(*name, endpoint.clone()).with_max_parallel(*parallel)).unwrap();
            host.mount(endpoint, sleeper(*ms));
        }
        (registry, host)
    }

    #[tokio::test(start_paused = true)]
    async fn group_runs_concurrently_in_order() {
        let (registry, host) = setup(&[("A", 2, 300), ("B", 1, 100)]);
        let d = Dispatcher::new(registry.clone(), host, DispatcherConfig::default());
        let reqs = vec![request(&registry, "A", 0, vec![]), request(&registry, "B", 1, vec![]), request(&registry, "A", 2, vec![])];
        let start = Instant::now();
        let results = d.dispatch_group(reqs).await;
        assert_eq!(start.elapsed(), Duration::from_millis(300));
        let tools: Vec<_> = results.iter().map(|r| (r.tool.as_str(), r.group.0)).collect();
        assert_eq!(tools, vec![("A", 0), ("B", 1), ("A", 2)]);
        assert!(results.iter().all(|r| r.outcome.is_ok()));
    }

    #[tokio::test(start_paused = true)]
    async fn sequential_mode_serializes() {
        let (registry, host) = setup(&[("A", 4, 300), ("B", 4, 100)]);
        let config = DispatcherConfig { sequential: true, ..Default::default() };
        let d = Dispatcher::new(registry.clone(), host, config);
        let start = Instant::now();
        d.dispatch_group(vec![request(&registry, "A", 0, vec![]), request(&registry, "B", 1, vec![])]).await;
        assert_eq!(start.elapsed(), Duration::from_millis(400));
    }

    #[tokio::test(start_paused = true)]
    async fn capacity_bounds_in_flight_calls() {
        let (registry, host) = setup(&[("A", 3, 50)]);
        let d = Arc::new(Dispatcher::new(registry.clone(), host, DispatcherConfig::default()));
        let reqs: Vec<_> = (0..20).map(|i| request(&registry, "A", i, vec![])).collect();
        let results = d.dispatch_group(reqs).await;
        assert_eq!(results.len(), 20);
        let capacity = registry.capacity("A").unwrap();
        assert_eq!(capacity.high_water, 3);
        assert_eq!(capacity.in_flight, 0);
    }

    #[tokio::test(start_paused = true)]
    async fn full_queue_reports_capacity_exhausted() {
        let registry = Arc::new(Registry::new());
        let host = Arc::new(ToolHost::new());
        registry.register_tool(ToolDescriptor::new("A", "local://a").with_max_parallel(1).with_queue_limit(1)).unwrap();
        host.mount("local://a", sleeper(100));
        let d = Dispatcher::new(registry.clone(), host, DispatcherConfig::default());
        let results = d.dispatch_group((0..3).map(|i| request(&registry, "A", i, vec![])).collect()).await;
        let labels: Vec<_> = results.iter().map(|r| r.outcome.label()).collect();
        assert_eq!(labels, vec!["ok", "ok", "capacity_exhausted"]);
    }

    #[tokio::test(start_paused = true)]
    async fn timeouts_quarantine_after_three_and_late_results_are_dropped() {
        let registry = Arc::new(Registry::new());
        let host = Arc::new(ToolHost::new());
        let events = Arc::new(EventHub::new());
        events.open("s");
        registry.register_tool(ToolDescriptor::new("Slow", "local://slow").with_max_parallel(4).with_timeout_ms(1000)).unwrap();
        host.mount("local://slow", sleeper(2000));
        let d = Dispatcher::new(registry.clone(), host, DispatcherConfig::default()).with_events(events.clone());
        for i in 0..3 {
            let r = d.dispatch(request(&registry, "Slow", i, vec![])).await;
            assert_eq!(r.outcome, Outcome::Timeout { after_ms: 1000 });
            assert_eq!(r.elapsed, Duration::from_millis(1000));
        }
        let fourth = d.dispatch(request(&registry, "Slow", 3, vec![])).await;
        assert_eq!(fourth.outcome.label(), "unavailable");
        assert_eq!(fourth.transcript_text(), Ok("Slow: tool unavailable".into()));
        tokio::time::sleep(Duration::from_secs(2)).await;
        let history = events.history("s", 0).unwrap();
        let kinds: Vec<_> = history.iter().map(|e| e.event_type).collect();
        assert_eq!(kinds.iter().filter(|k| **k == EventType::Quarantine).count(), 1);
        assert_eq!(kinds.iter().filter(|k| **k == EventType::DroppedResult).count(), 3);
        assert_eq!(registry.capacity("Slow").unwrap().in_flight, 0);
        tokio::time::sleep(Duration::from_secs(60)).await;
        assert_eq!(registry.descriptor("Slow").unwrap().status, ToolStatus::Available);
    }

    #[tokio::test(start_paused = true)]
    async fn hung_tools_release_their_lease_after_the_grace_period() {
        let (registry, host) = setup(&[("Hung", 1, 3_600_000)]);
        let d = Dispatcher::new(registry.clone(), host, DispatcherConfig::default());
        let r = d.dispatch(request(&registry, "Hung", 0, vec![])).await;
        assert_eq!(r.outcome.label(), "timeout");
        assert_eq!(registry.capacity("Hung").unwrap().in_flight, 1);
        tokio::time::sleep(Duration::from_secs(6)).await;
        assert_eq!(registry.capacity("Hung").unwrap().in_flight, 0);
    }

    #[tokio::test]
    async fn tool_errors_and_missing_handlers() {
        let registry = Arc::new(Registry::new());
        let host = Arc::new(ToolHost::new());
        registry.register_tool(ToolDescriptor::new("Bad", "local://bad")).unwrap();
        registry.register_tool(ToolDescriptor::new("Ghost", "local://ghost")).unwrap();
        host.mount("local://bad", handler_fn(|_| async { Err("disk on fire".to_string()) }));
        let d = Dispatcher::new(registry.clone(), host, DispatcherConfig::default());
        let r = d.dispatch(request(&registry, "Bad", 0, vec![])).await;
        assert_eq!(r.transcript_text(), Err("Bad failed: disk on fire".into()));
        let r = d.dispatch(request(&registry, "Ghost", 1, vec![])).await;
        assert_eq!(r.outcome.label(), "tool_error");
    }

    #[tokio::test]
    async fn removed_tools_are_unavailable() {
        let (registry, host) = setup(&[("A", 1, 1)]);
        let d = Dispatcher::new(registry.clone(), host, DispatcherConfig::default());
        let req = request(&registry, "A", 0, vec![]);
        registry.deregister_tool("A").unwrap();
        assert_eq!(d.dispatch(req).await.outcome.label(), "unavailable");
    }

    #[tokio::test]
    async fn injected_faults_replace_successes() {
        let (registry, host) = setup(&[("A", 1, 1)]);
        let d = Dispatcher::new(registry.clone(), host, DispatcherConfig::default()).with_faults(Arc::new(SeededFaults::new(1.0, 3)));
        let r = d.dispatch(request(&registry, "A", 0, vec![])).await;
        assert_eq!(r.outcome, Outcome::ToolError { message: "injected failure".into() });
    }

    #[tokio::test]
    async fn remote_calls_get_only_the_selected_page() {
        let registry = Arc::new(Registry::new());
        let host = Arc::new(ToolHost::new());
        let sig = TypeSignature::new(vec![ParamSpec::optional("page", SemanticType::Integer)], SemanticType::String).with_attachment(Some("page"));
        registry
            .register_tool(ToolDescriptor::new("PDFParser", "local://pdf").with_locality(Locality::Remote).with_signature(sig))
            .unwrap();
        let seen = Arc::new(AtomicUsize::new(0));
        let counter = seen.clone();
        host.mount(
            "local://pdf",
            handler_fn(move |req: ToolRequest| {
                let counter = counter.clone();
                async move {
                    let pages = req.attachment.map(|a| a.pages).unwrap_or_default();
                    counter.fetch_add(pages.len(), Ordering::SeqCst);
                    Ok(pages.iter().map(|p| p.text.clone()).collect::<Vec<_>>().join("\n"))
                }
            }),
        );
        let d = Dispatcher::new(registry.clone(), host, DispatcherConfig::default());
        let doc = Arc::new(vec![Attachment::new("report.pdf", (1..=100).map(|p| format!("p{p}")).collect())]);
        let mut req = request(&registry, "PDFParser", 0, vec![Argument::named("page", ArgValue::Int(45))]);
        req.attachments = doc.clone();
        assert_eq!(d.dispatch(req).await.outcome, Outcome::Ok { text: "p45".into() });
        let mut whole = request(&registry, "PDFParser", 1, vec![]);
        whole.attachments = doc;
        assert_eq!(d.dispatch(whole).await.outcome.label(), "rejected");
        assert_eq!(seen.load(Ordering::SeqCst), 1);
        let audit = d.audit().for_session("s");
        assert_eq!(audit.len(), 1);
        assert_eq!(audit[0].pages, vec![45]);
    }
}
