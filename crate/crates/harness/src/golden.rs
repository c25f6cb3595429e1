//! The scripted document-query session used as a regression gate.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use reactor_core::backends::{Script, ScriptStep, ScriptedBackend};
use reactor_core::dispatcher::{Attachment, ToolHost};
use reactor_core::observability::Event;
use reactor_core::planner::EntryKind;
use reactor_core::{
    Dispatcher, DispatcherConfig, EventHub, Orchestrator, Registry, SessionConfig, SessionOutcome, SessionState, SessionStatus,
};
use serde::{Deserialize, Serialize};
use tokio::time::Instant;

use crate::experiments::TokenTrace;
use crate::fakes::{self, FakeLog};

pub const GOLDEN_TASK: &str = "Using the attached financial report, what was ARR in Q1 2014 and how does it compare with Q1 2013?";

pub const GOLDEN_TRANSCRIPT: &str = include_str!("../fixtures/golden_pdf.transcript");

pub const GOLDEN_SESSION_ID: &str = "golden-pdf";

pub fn golden_script() -> Script {
    Script::new(vec![
        ScriptStep::new(
            "Thought: The question needs the Q1 2014 and Q1 2013 ARR figures from the attached report. I will find the pages that mention them.\n\
             Action: DocSearch(query=\"ARR Q1 2014\") && DocSearch(query=\"ARR Q1 2013\")",
        )
        .expecting("Task: ")
        .expecting(fakes::REPORT_NAME),
        ScriptStep::new(
            "Thought: The figures are on pages 45 and 88. I will read only those two pages.\n\
             Action: PDFParser(page=45, query=\"ARR Q1 2014\") && PDFParser(page=88, query=\"ARR Q1 2013\")",
        )
        .expecting("appears on page 45")
        .expecting("appears on page 88"),
        ScriptStep::new(
            "Thought: Now I have both values. I should compare them.\n\
             Action: Summarizer(texts=[\"Q1 2014 ARR: $5.2M\", \"Q1 2013 ARR: $4.6M\"], prompt=\"Compare ARR Q1 2013 vs Q1 2014\")",
        )
        .expecting("Observation: Q1 2014 ARR: $5.2M")
        .expecting("Observation: Q1 2013 ARR: $4.6M"),
        ScriptStep::new(
            "Thought: The comparison answers the question.\n\
             Final Answer: In Q1 2014 the ARR was $5.2M, which is about 13% higher than the $4.6M in Q1 2013.",
        )
        .expecting("~13% higher"),
    ])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenOptions {
    pub pdf_max_parallel: usize,
    /// Pages the parser fake cannot read.
    pub missing_pages: HashSet<usize>,
    pub tool_latency: Duration,
    pub streaming: bool,
}

impl Default for GoldenOptions {
    fn default() -> Self {
        Self { pdf_max_parallel: 4, missing_pages: HashSet::new(), tool_latency: Duration::from_millis(150), streaming: false }
    }
}

/// Registers the document tools and mounts their fakes. DocSearch gets its
/// index in-process; the parser and summarizer only see what calls send.
pub fn mount_document_tools(registry: &Registry, host: &ToolHost, index: Attachment, log: Arc<FakeLog>, options: &GoldenOptions) {
    let latency = options.tool_latency;
    for descriptor in [fakes::doc_search_descriptor(), fakes::pdf_parser_descriptor(options.pdf_max_parallel), fakes::summarizer_descriptor()] {
        registry.register_tool(descriptor).expect("fresh registry");
    }
    host.mount("local://fake/doc-search", fakes::doc_search(index, log.clone(), latency));
    host.mount("local://fake/pdf-parser", fakes::pdf_parser(log.clone(), latency, options.missing_pages.clone()));
    host.mount("local://fake/summarizer", fakes::summarizer(log, latency));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    /// Zero-based line of the transcript.
    pub line: usize,
    pub expected: Option<String>,
    pub actual: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenReport {
    pub passed: bool,
    /// Failed checks, in the order they were evaluated.
    pub failures: Vec<String>,
    pub divergence: Option<Divergence>,
    pub transcript: Vec<String>,
    pub outcome: SessionOutcome,
    pub pdf_overlap: bool,
    pub pdf_pages: Vec<Vec<usize>>,
    pub max_pages_per_call: usize,
    pub token_trace: TokenTrace,
    pub elapsed_ms: u64,
}

/// One line per transcript event: `type[tool]: text`.
pub fn transcript_lines(events: &[Event]) -> Vec<String> {
    events
        .iter()
        .filter(|e| e.event_type.is_transcript())
        .map(|e| {
            let tool = e.content.get("tool").and_then(|t| t.as_str()).map(|t| format!("[{t}]")).unwrap_or_default();
            format!("{}{tool}: {}", e.event_type, e.text())
        })
        .collect()
}

pub fn first_divergence(expected: &[&str], actual: &[String]) -> Option<Divergence> {
    let n = expected.len().max(actual.len());
    (0..n).find(|&i| expected.get(i).copied() != actual.get(i).map(String::as_str)).map(|line| Divergence {
        line,
        expected: expected.get(line).map(|s| s.to_string()),
        actual: actual.get(line).cloned(),
    })
}

pub async fn run_golden_trace(options: GoldenOptions) -> GoldenReport {
    let started = Instant::now();
    let events = Arc::new(EventHub::new());
    let registry = Arc::new(Registry::with_events(events.clone()));
    let host = Arc::new(ToolHost::new());
    let log = FakeLog::new();
    mount_document_tools(&registry, &host, fakes::financial_report(), log.clone(), &options);
    let dispatcher = Arc::new(Dispatcher::new(registry, host, DispatcherConfig::default()).with_events(events.clone()));
    let backend = Arc::new(ScriptedBackend::new(golden_script()));
    let orchestrator = Orchestrator::new(dispatcher, events.clone(), backend);
    let config = SessionConfig { streaming: options.streaming, ..Default::default() };
    let mut session = SessionState::new(GOLDEN_SESSION_ID, GOLDEN_TASK, vec![fakes::financial_report()], config);
    let outcome = orchestrator.run_session(&mut session).await;

    let history = events.history(GOLDEN_SESSION_ID, 0).unwrap_or_default();
    let transcript = transcript_lines(&history);
    let mut failures = Vec::new();

    let expected: Vec<&str> = GOLDEN_TRANSCRIPT.lines().collect();
    let divergence = first_divergence(&expected, &transcript);
    if let Some(d) = &divergence {
        failures.push(format!("transcript diverges at line {}: expected {:?}, got {:?}", d.line + 1, d.expected, d.actual));
    }
    if outcome.status != SessionStatus::Done {
        failures.push(format!("session ended {:?}: {}", outcome.status, outcome.failure.clone().unwrap_or_default()));
    }
    let answer = outcome.answer.clone().unwrap_or_default();
    for needle in ["$5.2M", "$4.6M", "13%"] {
        if !answer.contains(needle) {
            failures.push(format!("final answer lacks {needle}"));
        }
    }
    let pdf_results: Vec<_> = session.results.iter().filter(|r| r.tool == "PDFParser").collect();
    let groups: HashSet<_> = pdf_results.iter().map(|r| r.group).collect();
    if pdf_results.len() != 2 || groups.len() != 1 {
        failures.push(format!("expected two PDFParser calls in one group, saw {} in {} groups", pdf_results.len(), groups.len()));
    }
    let one_action_line = session
        .scratchpad
        .entries()
        .iter()
        .any(|e| e.kind == EntryKind::Action && e.content.matches("PDFParser(").count() == 2);
    if !one_action_line {
        failures.push("PDFParser calls were not issued as one action".into());
    }
    let pdf_overlap = log.overlapping("PDFParser");
    let expect_overlap = options.pdf_max_parallel >= 2;
    if pdf_overlap != expect_overlap {
        failures.push(format!("PDFParser overlap was {pdf_overlap}, expected {expect_overlap}"));
    }
    let pdf_pages: Vec<Vec<usize>> = log.calls_to("PDFParser").into_iter().map(|c| c.pages).collect();
    let max_pages_per_call = log.calls().iter().map(|c| c.pages.len()).max().unwrap_or(0);
    if max_pages_per_call > 1 || pdf_pages.iter().any(|p| p.len() != 1) {
        failures.push(format!("a fake received more than one page: {pdf_pages:?}"));
    }

    GoldenReport {
        passed: failures.is_empty(),
        failures,
        divergence,
        transcript,
        outcome,
        pdf_overlap,
        pdf_pages,
        max_pages_per_call,
        token_trace: TokenTrace::from_session(&session),
        elapsed_ms: started.elapsed().as_millis() as u64,
    }
}
