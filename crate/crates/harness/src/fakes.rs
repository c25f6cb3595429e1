//! Deterministic stand-ins for the document tools: a page index, a page
//! parser and a summarizer.

use std::collections::HashSet;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use reactor_core::dispatcher::{handler_fn, Attachment, ToolHandler, ToolRequest};
use reactor_core::registry::{Locality, ParamSpec, SemanticType, TypeSignature};
use reactor_core::ToolDescriptor;
use serde::{Deserialize, Serialize};
use tokio::time::Instant;

pub const REPORT_NAME: &str = "financial_report.pdf";
pub const REPORT_PAGES: usize = 100;

/// A 100-page report whose ARR figures sit on pages 45 and 88.
pub fn financial_report() -> Attachment {
    let pages = (1..=REPORT_PAGES)
        .map(|n| match n {
            45 => "Q1 2014 quarterly report\nQ1 2014 ARR: $5.2M\nNet retention improved across segments.".to_string(),
            88 => "Q1 2013 quarterly report\nQ1 2013 ARR: $4.6M\nChurn stayed flat year over year.".to_string(),
            n => format!("Section {n}\nOperating notes, headcount and facilities for section {n}."),
        })
        .collect();
    Attachment::new(REPORT_NAME, pages)
}

/// One invocation seen by a fake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub tool: String,
    pub args: serde_json::Value,
    pub pages: Vec<usize>,
    pub started: Duration,
    pub finished: Duration,
}

/// Shared log of fake invocations with timestamps relative to creation.
#[derive(Debug)]
pub struct FakeLog {
    t0: Instant,
    calls: Mutex<Vec<CallRecord>>,
}

impl Default for FakeLog {
    fn default() -> Self {
        Self { t0: Instant::now(), calls: Mutex::new(Vec::new()) }
    }
}

impl FakeLog {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().expect("log lock").clone()
    }

    pub fn calls_to(&self, tool: &str) -> Vec<CallRecord> {
        self.calls().into_iter().filter(|c| c.tool == tool).collect()
    }

    /// Whether any two calls to `tool` ran at the same time.
    pub fn overlapping(&self, tool: &str) -> bool {
        let calls = self.calls_to(tool);
        calls.iter().enumerate().any(|(i, a)| calls[i + 1..].iter().any(|b| a.started < b.finished && b.started < a.finished))
    }

    fn record(&self, request: &ToolRequest, started: Instant) {
        let record = CallRecord {
            tool: request.tool.clone(),
            args: request.args.clone(),
            pages: request.attachment.iter().flat_map(|a| a.pages.iter().map(|p| p.page)).collect(),
            started: started - self.t0,
            finished: Instant::now() - self.t0,
        };
        self.calls.lock().expect("log lock").push(record);
    }
}

fn logged<F>(log: Arc<FakeLog>, latency: Duration, f: F) -> Arc<dyn ToolHandler>
where
    F: Fn(&ToolRequest) -> Result<String, String> + Send + Sync + 'static,
{
    let f = Arc::new(f);
    handler_fn(move |request: ToolRequest| {
        let (log, f) = (log.clone(), f.clone());
        async move {
            let started = Instant::now();
            tokio::time::sleep(latency).await;
            let out = f(&request);
            log.record(&request, started);
            out
        }
    })
}

fn terms(query: &str) -> Vec<String> {
    query.split_whitespace().map(str::to_lowercase).collect()
}

/// Page lookup over a local index of the report. Receives only the query.
pub fn doc_search(index: Attachment, log: Arc<FakeLog>, latency: Duration) -> Arc<dyn ToolHandler> {
    logged(log, latency, move |request| {
        let query = request.arg_str("query").ok_or("missing query")?;
        let wanted = terms(query);
        let hits: Vec<String> = index
            .pages
            .iter()
            .enumerate()
            .filter(|(_, text)| {
                let text = text.to_lowercase();
                wanted.iter().all(|t| text.contains(t.as_str()))
            })
            .map(|(i, _)| (i + 1).to_string())
            .collect();
        Ok(match hits.as_slice() {
            [] => format!("no pages match \"{query}\""),
            [one] => format!("\"{query}\" appears on page {one}"),
            many => format!("\"{query}\" appears on pages {}", many.join(", ")),
        })
    })
}

/// Returns the lines of the supplied pages that match the query.
/// Pages in `missing` fail as unreadable.
pub fn pdf_parser(log: Arc<FakeLog>, latency: Duration, missing: HashSet<usize>) -> Arc<dyn ToolHandler> {
    logged(log, latency, move |request| {
        let attachment = request.attachment.as_ref().ok_or("no pages supplied")?;
        let wanted = terms(request.arg_str("query").unwrap_or(""));
        let mut lines = Vec::new();
        for page in &attachment.pages {
            if missing.contains(&page.page) {
                return Err(format!("page {} unavailable", page.page));
            }
            lines.extend(page.text.lines().filter(|line| {
                let line = line.to_lowercase();
                !wanted.is_empty() && wanted.iter().all(|t| line.contains(t.as_str()))
            }));
        }
        if lines.is_empty() {
            Ok("nothing relevant on the requested pages".into())
        } else {
            Ok(lines.join("\n"))
        }
    })
}

/// `"Q1 2014 ARR: $5.2M"` → (`"Q1 2014"`, `"$5.2M"`, 5.2).
fn metric(text: &str) -> Option<(String, String, f64)> {
    let (label, rest) = text.split_once(" ARR:")?;
    let amount = rest.trim();
    let value = amount.strip_prefix('$')?.trim_end_matches('M').parse().ok()?;
    Some((label.trim().to_string(), amount.to_string(), value))
}

/// Compares two quarterly figures: the later one against the earlier.
pub fn summarizer(log: Arc<FakeLog>, latency: Duration) -> Arc<dyn ToolHandler> {
    logged(log, latency, |request| {
        let texts: Vec<&str> = match request.args.get("texts") {
            Some(serde_json::Value::Array(items)) => items.iter().filter_map(|v| v.as_str()).collect(),
            Some(serde_json::Value::String(s)) => vec![s.as_str()],
            _ => return Err("missing texts".into()),
        };
        let mut metrics: Vec<_> = texts.iter().filter_map(|t| metric(t)).collect();
        if metrics.len() != 2 {
            return Err(format!("expected two ARR figures, found {}", metrics.len()));
        }
        metrics.sort_by(|a, b| a.0.split_whitespace().last().cmp(&b.0.split_whitespace().last()));
        let (old, new) = (&metrics[0], &metrics[1]);
        let change = ((new.2 - old.2) / old.2 * 100.0).round();
        let direction = if change >= 0.0 { "higher" } else { "lower" };
        Ok(format!("ARR in {} was {}, ~{}% {direction} than {}'s {}.", new.0, new.1, change.abs(), old.0, old.1))
    })
}

pub fn doc_search_descriptor() -> ToolDescriptor {
    ToolDescriptor::new("DocSearch", "local://fake/doc-search")
        .with_description("find which pages of the attached document mention a phrase")
        .with_signature(TypeSignature::new(vec![ParamSpec::required("query", SemanticType::String)], SemanticType::String))
        .with_max_parallel(2)
        .with_locality(Locality::Local)
}

pub fn pdf_parser_descriptor(max_parallel: usize) -> ToolDescriptor {
    ToolDescriptor::new("PDFParser", "local://fake/pdf-parser")
        .with_description("extract lines matching a query from selected pages of the attached PDF")
        .with_signature(
            TypeSignature::new(
                vec![ParamSpec::required("page", SemanticType::String), ParamSpec::optional("query", SemanticType::String)],
                SemanticType::String,
            )
            .with_attachment(Some("page")),
        )
        .with_max_parallel(max_parallel)
        .with_locality(Locality::Remote)
}

pub fn summarizer_descriptor() -> ToolDescriptor {
    ToolDescriptor::new("Summarizer", "local://fake/summarizer")
        .with_description("compare or condense short texts")
        .with_signature(TypeSignature::new(
            vec![ParamSpec::required("texts", SemanticType::ListOfString), ParamSpec::optional("prompt", SemanticType::String)],
            SemanticType::String,
        ))
        .with_max_parallel(2)
        .with_cost(0.015)
        .with_locality(Locality::Remote)
}
