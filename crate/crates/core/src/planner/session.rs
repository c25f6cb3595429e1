//! The plan/act/observe loop for one task.

use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::task::JoinHandle;
use tokio::time::Instant;

use super::grammar::{parse_planner_output, PlannerBody};
use super::prompt::{assemble_prompt, PromptBudget, PromptInputs};
use super::scratchpad::{EntryKind, Scratchpad, ScratchpadEntry};
use super::stream::StreamParser;
use crate::action::{render_call_line, Action, CallMode, GroupId};
use crate::backends::{BackendRequest, PlannerBackend, StreamChunk, TokenUsage, DEFAULT_STOP_SEQUENCES};
use crate::cost::{estimate_tokens, CostLedger, CostSummary, RateConfig};
use crate::dispatcher::{Attachment, DispatchRequest, DispatchResult, Dispatcher};
use crate::observability::{EventHub, EventType};
use crate::registry::{validate_action, Registry, RegistrySnapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub max_turns: u32,
    pub context_tokens: u64,
    pub keep_verbatim: usize,
    pub max_completion_tokens: u32,
    pub stop: Vec<String>,
    /// Consume the backend as a token stream and dispatch calls as they
    /// complete.
    pub streaming: bool,
    /// How long a turn waits for background calls, in milliseconds.
    pub background_wait_ms: u64,
    pub rates: RateConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_turns: 10,
            context_tokens: 8192,
            keep_verbatim: 2,
            max_completion_tokens: 512,
            stop: DEFAULT_STOP_SEQUENCES.iter().map(|s| s.to_string()).collect(),
            streaming: false,
            background_wait_ms: 500,
            rates: RateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    AwaitingResults,
    Finalizing,
    Done,
    Failed,
}

impl SessionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionStatus::Done | SessionStatus::Failed)
    }
}

enum Slot {
    Running(JoinHandle<DispatchResult>),
    Rejected(String),
}

struct PendingCall {
    group: GroupId,
    tool: String,
    mode: CallMode,
    rate: Option<f64>,
    slot: Slot,
}

/// Mutable state of one task.
pub struct SessionState {
    pub id: String,
    pub task: String,
    pub attachments: Arc<Vec<Attachment>>,
    pub config: SessionConfig,
    pub scratchpad: Scratchpad,
    pub turn: u32,
    pub status: SessionStatus,
    pub cost: CostLedger<f64>,
    pub answer: Option<String>,
    pub failure: Option<String>,
    pub forced_final: bool,
    pub backend_calls: u32,
    /// Every tool result, in the order it reached the transcript.
    pub results: Vec<DispatchResult>,
    dispatch_seq: u64,
    next_group: u64,
    registry_version: Option<u64>,
    pending: Vec<PendingCall>,
    started: Instant,
}

impl std::fmt::Debug for SessionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionState")
            .field("id", &self.id)
            .field("turn", &self.turn)
            .field("status", &self.status)
            .field("pending", &self.pending.len())
            .finish_non_exhaustive()
    }
}

impl SessionState {
    pub fn new(id: impl Into<String>, task: impl Into<String>, attachments: Vec<Attachment>, config: SessionConfig) -> Self {
        Self {
            id: id.into(),
            task: task.into(),
            attachments: Arc::new(attachments),
            config,
            scratchpad: Scratchpad::new(),
            turn: 0,
            status: SessionStatus::Running,
            cost: CostLedger::new(),
            answer: None,
            failure: None,
            forced_final: false,
            backend_calls: 0,
            results: Vec::new(),
            dispatch_seq: 0,
            next_group: 1,
            registry_version: None,
            pending: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn pending_calls(&self) -> usize {
        self.pending.len()
    }

    pub fn background_pending(&self) -> bool {
        self.pending.iter().any(|p| p.mode == CallMode::Background)
    }

    pub fn outcome(&self) -> SessionOutcome {
        SessionOutcome {
            session_id: self.id.clone(),
            status: self.status,
            answer: self.answer.clone(),
            failure: self.failure.clone(),
            turns: self.turn,
            backend_calls: self.backend_calls,
            forced_final: self.forced_final,
            cost: self.cost.summary(),
            elapsed_ms: self.started.elapsed().as_millis() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub session_id: String,
    pub status: SessionStatus,
    pub answer: Option<String>,
    pub failure: Option<String>,
    pub turns: u32,
    pub backend_calls: u32,
    pub forced_final: bool,
    pub cost: CostSummary,
    pub elapsed_ms: u64,
}

/// Rebuilds a transcript from a session's event history.
pub fn scratchpad_from_events(events: &[crate::observability::Event]) -> Scratchpad {
    let mut pad = Scratchpad::new();
    for event in events.iter().filter(|e| e.event_type.is_transcript()) {
        if let Ok(entry) = serde_json::from_value::<ScratchpadEntry>(event.content.clone()) {
            let _ = pad.append(entry);
        }
    }
    pad
}

fn event_type_of(kind: EntryKind) -> EventType {
    match kind {
        EntryKind::Thought => EventType::Thought,
        EntryKind::Action => EventType::Action,
        EntryKind::Observation => EventType::Result,
        EntryKind::Error => EventType::Error,
        EntryKind::Final => EventType::FinalAnswer,
    }
}

/// Drives sessions against a registry, dispatcher and backend.
#[derive(Clone)]
pub struct Orchestrator {
    registry: Arc<Registry>,
    dispatcher: Arc<Dispatcher>,
    events: Arc<EventHub>,
    backend: Arc<dyn PlannerBackend>,
}

impl Orchestrator {
    pub fn new(dispatcher: Arc<Dispatcher>, events: Arc<EventHub>, backend: Arc<dyn PlannerBackend>) -> Self {
        Self { registry: dispatcher.registry().clone(), dispatcher, events, backend }
    }

    /// Same registry, dispatcher and event hub with another backend.
    pub fn with_backend(&self, backend: Arc<dyn PlannerBackend>) -> Self {
        Self { backend, ..self.clone() }
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn dispatcher(&self) -> &Arc<Dispatcher> {
        &self.dispatcher
    }

    pub fn events(&self) -> &Arc<EventHub> {
        &self.events
    }

    /// Runs a fresh session to completion.
    pub async fn run(&self, id: &str, task: &str, attachments: Vec<Attachment>, config: SessionConfig) -> SessionOutcome {
        let mut session = SessionState::new(id, task, attachments, config);
        self.run_session(&mut session).await
    }

    /// Turns until a final answer or failure. Once the turn limit is hit,
    /// exactly one more backend call asks for a final answer.
    pub async fn run_session(&self, session: &mut SessionState) -> SessionOutcome {
        self.events.open(&session.id);
        while !session.status.is_terminal() {
            self.run_turn(session).await;
            if session.status == SessionStatus::AwaitingResults {
                self.await_results(session).await;
            }
        }
        for pending in session.pending.drain(..) {
            if let Slot::Running(handle) = pending.slot {
                handle.abort();
            }
        }
        self.events.finish(&session.id);
        session.outcome()
    }

    fn append(&self, session: &mut SessionState, entry: ScratchpadEntry, tool: Option<&str>) {
        let mut content = serde_json::to_value(&entry).expect("entry serializes");
        if let (Some(tool), Value::Object(map)) = (tool, &mut content) {
            map.insert("tool".into(), Value::String(tool.to_string()));
        }
        let kind = entry.kind;
        if let Err(e) = session.scratchpad.append(entry) {
            tracing::error!(error = %e, "dropping out-of-order transcript entry");
            return;
        }
        self.events.emit(&session.id, event_type_of(kind), content);
    }

    fn fail(&self, session: &mut SessionState, reason: String) {
        tracing::warn!(session = %session.id, %reason, "session failed");
        self.events.emit(&session.id, EventType::Error, json!({ "content": reason, "session_failed": true }));
        session.failure = Some(reason);
        session.status = SessionStatus::Failed;
    }

    /// One planner call plus dispatch of whatever it asks for.
    pub async fn run_turn(&self, session: &mut SessionState) {
        if session.status.is_terminal() {
            return;
        }
        self.events.open(&session.id);
        self.harvest_finished(session).await;
        let snapshot = self.registry.snapshot();
        if session.registry_version.is_some_and(|v| v != snapshot.version) {
            let offered: Vec<&str> = snapshot.offered().map(|t| t.name()).collect();
            self.events.emit(&session.id, EventType::RegistryChanged, json!({ "version": snapshot.version, "offered": offered }));
        }
        session.registry_version = Some(snapshot.version);

        let force_final = session.turn >= session.config.max_turns;
        if force_final {
            session.status = SessionStatus::Finalizing;
        }
        let budget = PromptBudget { context_tokens: session.config.context_tokens, keep_verbatim: session.config.keep_verbatim };
        let inputs = PromptInputs {
            snapshot: &snapshot,
            task: &session.task,
            attachments: &session.attachments,
            scratchpad: &session.scratchpad,
            background_pending: session.background_pending(),
            force_final,
        };
        let prompt = match assemble_prompt(inputs, budget) {
            Ok(p) => p.text,
            Err(e) => return self.fail(session, e.to_string()),
        };
        let request = BackendRequest {
            prompt,
            stop: session.config.stop.clone(),
            max_tokens: session.config.max_completion_tokens,
        };
        session.turn += 1;
        session.backend_calls += 1;
        let group = GroupId(session.next_group);
        session.next_group += 1;

        let streaming = session.config.streaming && !force_final;
        let turn = if streaming {
            self.streamed_turn(session, &snapshot, &request, group).await
        } else {
            self.batch_turn(&request).await
        };
        let (text, usage, launched, interrupted) = match turn {
            Ok(t) => t,
            Err(e) => return self.fail(session, e),
        };
        let usage = usage.unwrap_or(TokenUsage {
            prompt_tokens: estimate_tokens(&request.prompt),
            completion_tokens: estimate_tokens(&text),
        });
        if let Some(rates) = session.config.rates.to_rates::<f64>() {
            session.cost.record_tokens(usage.prompt_tokens, usage.completion_tokens, &rates);
        }

        let output = parse_planner_output(&text, group);
        let current = session.turn;
        if let Some(thought) = output.thought.clone() {
            self.append(session, ScratchpadEntry::new(EntryKind::Thought, thought, current, None), None);
        }

        if force_final {
            let answer = match &output.body {
                PlannerBody::Final(answer) => answer.clone(),
                _ => text.trim().to_string(),
            };
            return self.finalize(session, answer, true);
        }

        match (output.body, interrupted) {
            (_, Some(reason)) if launched.is_empty() => {
                let msg = format!("planner stream interrupted: {reason}");
                self.append(session, ScratchpadEntry::new(EntryKind::Error, msg, current, None), None);
            }
            (_, Some(_)) => self.record_actions(session, &snapshot, group, launched, Vec::new()),
            (PlannerBody::Final(answer), None) => self.finalize(session, answer, false),
            (PlannerBody::Actions(actions), None) => {
                let rest = actions.into_iter().skip(launched.len()).collect();
                self.record_actions(session, &snapshot, group, launched, rest);
            }
            (PlannerBody::Malformed(failure), None) => {
                if !launched.is_empty() {
                    self.record_actions(session, &snapshot, group, launched, Vec::new());
                }
                let msg = format!("could not parse planner output: {}", failure.reason);
                self.append(session, ScratchpadEntry::new(EntryKind::Error, msg, current, None), None);
            }
        }
    }

    fn finalize(&self, session: &mut SessionState, answer: String, forced: bool) {
        let turn = session.turn;
        self.append(session, ScratchpadEntry::new(EntryKind::Final, answer.clone(), turn, None), None);
        session.answer = Some(answer);
        session.forced_final = forced;
        session.status = SessionStatus::Done;
    }

    async fn batch_turn(&self, request: &BackendRequest) -> Result<TurnText, String> {
        let completion = self.backend.complete(request).await.map_err(|e| e.to_string())?;
        Ok((completion.text, completion.usage, Vec::new(), None))
    }

    async fn streamed_turn(
        &self,
        session: &mut SessionState,
        snapshot: &RegistrySnapshot,
        request: &BackendRequest,
        group: GroupId,
    ) -> Result<TurnText, String> {
        let mut stream = self.backend.stream(request).await.map_err(|e| e.to_string())?;
        let mut parser = StreamParser::new(group);
        let mut launched = Vec::new();
        let mut usage = None;
        let mut interrupted = None;
        while let Some(item) = stream.next().await {
            match item {
                Ok(StreamChunk::Text(chunk)) => {
                    for action in parser.push(&chunk) {
                        let pending = self.launch(session, snapshot, &action);
                        launched.push((action, pending));
                    }
                }
                Ok(StreamChunk::Usage(u)) => usage = Some(u),
                Err(e) => {
                    interrupted = Some(e.to_string());
                    break;
                }
            }
        }
        Ok((parser.text().to_string(), usage, launched, interrupted))
    }

    fn launch(&self, session: &mut SessionState, snapshot: &RegistrySnapshot, action: &Action) -> PendingCall {
        let rate = snapshot.get(&action.tool).and_then(|t| t.descriptor.cost_per_1k_tokens);
        let slot = match validate_action(action, snapshot) {
            Ok(validated) => {
                let request = DispatchRequest {
                    session_id: session.id.clone(),
                    sequence: session.dispatch_seq,
                    action: validated,
                    attachments: session.attachments.clone(),
                };
                session.dispatch_seq += 1;
                Slot::Running(self.dispatcher.spawn(request))
            }
            Err(failure) => Slot::Rejected(format!("{}: {failure}", action.tool)),
        };
        PendingCall { group: action.group, tool: action.tool.clone(), mode: action.mode, rate, slot }
    }

    fn record_actions(
        &self,
        session: &mut SessionState,
        snapshot: &RegistrySnapshot,
        group: GroupId,
        launched: Vec<(Action, PendingCall)>,
        rest: Vec<Action>,
    ) {
        let mut calls = launched;
        for action in rest {
            let pending = self.launch(session, snapshot, &action);
            calls.push((action, pending));
        }
        let actions: Vec<Action> = calls.iter().map(|(a, _)| a.clone()).collect();
        let turn = session.turn;
        self.append(session, ScratchpadEntry::new(EntryKind::Action, render_call_line(&actions), turn, Some(group)), Some(&tool_list(&actions)));
        session.pending.extend(calls.into_iter().map(|(_, p)| p));
        session.status = SessionStatus::AwaitingResults;
    }

    fn record_result(&self, session: &mut SessionState, call: &PendingCall, result: Result<DispatchResult, String>) {
        let turn = session.turn;
        let (kind, text) = match result {
            Ok(result) => {
                session.cost.record_tool_tokens(&result.tool, result.tokens, call.rate.as_ref());
                let text = result.transcript_text();
                session.results.push(result);
                match text {
                    Ok(t) => (EntryKind::Observation, t),
                    Err(t) => (EntryKind::Error, t),
                }
            }
            Err(message) => (EntryKind::Error, message),
        };
        self.append(session, ScratchpadEntry::new(kind, text, turn, Some(call.group)), Some(&call.tool));
    }

    async fn settle(slot: &mut Slot) -> Result<DispatchResult, String> {
        match slot {
            Slot::Running(handle) => handle.await.map_err(|e| format!("dispatch task failed: {e}")),
            Slot::Rejected(message) => Err(message.clone()),
        }
    }

    /// Background calls that already finished.
    async fn harvest_finished(&self, session: &mut SessionState) {
        let (done, waiting): (Vec<_>, Vec<_>) = std::mem::take(&mut session.pending)
            .into_iter()
            .partition(|p| matches!(&p.slot, Slot::Running(h) if h.is_finished()) || matches!(p.slot, Slot::Rejected(_)));
        session.pending = waiting;
        for mut call in done {
            let result = Self::settle(&mut call.slot).await;
            self.record_result(session, &call, result);
        }
    }

    /// Waits for blocking calls of the turn, then briefly for background ones.
    pub async fn await_results(&self, session: &mut SessionState) {
        let pending = std::mem::take(&mut session.pending);
        let mut background = Vec::new();
        for mut call in pending {
            if call.mode == CallMode::Background && matches!(call.slot, Slot::Running(_)) {
                background.push(call);
                continue;
            }
            let result = Self::settle(&mut call.slot).await;
            self.record_result(session, &call, result);
        }
        let deadline = Instant::now() + Duration::from_millis(session.config.background_wait_ms);
        for mut call in background {
            let Slot::Running(handle) = &mut call.slot else { unreachable!() };
            match tokio::time::timeout_at(deadline, &mut *handle).await {
                Ok(result) => {
                    let result = result.map_err(|e| format!("dispatch task failed: {e}"));
                    self.record_result(session, &call, result);
                }
                Err(_) => session.pending.push(call),
            }
        }
        if !session.status.is_terminal() {
            session.status = SessionStatus::Running;
        }
    }
}

type TurnText = (String, Option<TokenUsage>, Vec<(Action, PendingCall)>, Option<String>);

fn tool_list(actions: &[Action]) -> String {
    actions.iter().map(|a| a.tool.as_str()).collect::<Vec<_>>().join(",")
}
