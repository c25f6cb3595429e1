//! A rule-based planner for fact-gathering workloads.
//!
//! The task names the facts to collect (`Collect facts: a, b, c`). Each turn
//! the policy looks up every fact not yet observed as `fact[name]=value`,
//! choosing among the offered candidate tools. With replanning on, a failed
//! lookup is retried through the next candidate; with it off, the first error
//! ends the session with whatever has been found.

use std::collections::BTreeMap;

use async_trait::async_trait;
use reactor_core::backends::{BackendError, BackendRequest, Completion, PlannerBackend};
use reactor_core::planner::prompt::FORCE_FINAL;

pub const TASK_PREFIX: &str = "Collect facts: ";

pub fn fact_task(facts: &[&str]) -> String {
    format!("{TASK_PREFIX}{}", facts.join(", "))
}

/// `fact[name]=value` as a response template for synthetic tools.
pub const FACT_TEMPLATE: &str = "fact[{q}]=value-of-{q}";

pub fn expected_fact(name: &str) -> String {
    format!("fact[{name}]=value-of-{name}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyBackend {
    /// Tools to use, in order of preference.
    pub candidates: Vec<String>,
    pub replan: bool,
}

impl PolicyBackend {
    pub fn new(candidates: impl IntoIterator<Item = impl Into<String>>, replan: bool) -> Self {
        Self { candidates: candidates.into_iter().map(Into::into).collect(), replan }
    }

    pub fn decide(&self, prompt: &str) -> String {
        let wanted = requested_facts(prompt);
        let found = observed_facts(prompt);
        let missing: Vec<&String> = wanted.iter().filter(|f| !found.contains_key(*f)).collect();
        let errors = error_count(prompt);

        if missing.is_empty() || prompt.contains(FORCE_FINAL) || (!self.replan && errors > 0) {
            let answer: Vec<String> = wanted
                .iter()
                .filter_map(|f| found.get(f).map(|v| format!("fact[{f}]={v}")))
                .collect();
            let answer = if answer.is_empty() { "no facts found".to_string() } else { answer.join("; ") };
            let thought = if missing.is_empty() { "All facts are in." } else { "Stopping with what I have." };
            return format!("Thought: {thought}\nFinal Answer: {answer}");
        }

        let offered = offered_tools(prompt);
        let usable: Vec<&String> = self.candidates.iter().filter(|c| offered.contains(c)).collect();
        let tool = match usable.as_slice() {
            [] => self.candidates.first().map(String::as_str).unwrap_or("Lookup"),
            tools => tools[errors % tools.len()].as_str(),
        };
        let calls: Vec<String> = missing.iter().map(|f| format!("{tool}(q=\"{f}\")")).collect();
        format!("Thought: {} facts still missing.\nAction: {}", missing.len(), calls.join(" && "))
    }
}

#[async_trait]
impl PlannerBackend for PolicyBackend {
    async fn complete(&self, request: &BackendRequest) -> Result<Completion, BackendError> {
        Ok(Completion { text: self.decide(&request.prompt), usage: None })
    }
}

fn requested_facts(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix("Task: ").and_then(|t| t.strip_prefix(TASK_PREFIX)))
        .map(|list| list.split(',').map(|f| f.trim().to_string()).filter(|f| !f.is_empty()).collect())
        .unwrap_or_default()
}

/// Every `fact[name]=value` in the prompt; values end at whitespace, `|` or `;`.
fn observed_facts(prompt: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut rest = prompt;
    while let Some(i) = rest.find("fact[") {
        rest = &rest[i + 5..];
        let Some(close) = rest.find("]=") else { break };
        let name = &rest[..close];
        let value_start = &rest[close + 2..];
        let end = value_start.find(|c: char| c.is_whitespace() || c == '|' || c == ';').unwrap_or(value_start.len());
        if !name.contains(|c: char| c.is_whitespace() || c == '{') && end > 0 {
            out.insert(name.to_string(), value_start[..end].to_string());
        }
        rest = value_start;
    }
    out
}

fn error_count(prompt: &str) -> usize {
    prompt.lines().filter(|l| l.starts_with("Error: ")).count() + prompt.matches("error: ").count()
}

fn offered_tools(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .filter_map(|l| l.strip_prefix('[').and_then(|l| l.split_once(':')).map(|(name, _)| name.to_string()))
        .collect()
}
