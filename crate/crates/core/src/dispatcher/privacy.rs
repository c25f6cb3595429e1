//! Minimal-context enforcement: a tool only ever receives the attachment
//! pages its call selects.

use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::transport::{AttachmentPayload, PagePayload, ToolRequest};
use crate::action::ArgValue;
use crate::registry::{Locality, ToolDescriptor, ValidatedAction};

/// A document supplied with a task, one string per page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub name: String,
    pub pages: Vec<String>,
}

impl Attachment {
    pub fn new(name: impl Into<String>, pages: Vec<String>) -> Self {
        Self { name: name.into(), pages }
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    pub fn char_count(&self) -> usize {
        self.pages.iter().map(|p| p.chars().count()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum PrivacyViolation {
    #[error("remote tool `{tool}` cannot receive all of `{attachment}`; select pages with `{selector}`")]
    WholeAttachmentToRemote { tool: String, attachment: String, selector: String },
    #[error("remote tool `{tool}` cannot receive all of `{attachment}`")]
    UnscopedRemote { tool: String, attachment: String },
    #[error("page selection `{selection}` is invalid for `{attachment}` ({pages} pages)")]
    BadSelection { attachment: String, selection: String, pages: usize },
    #[error("payload for `{tool}` is {chars} chars, over its {limit} char limit")]
    OversizePayload { tool: String, chars: usize, limit: usize },
}

/// Picks the attachment a call refers to: the one named by a `document`
/// argument, otherwise the first.
pub fn select_attachment<'a>(action: &ValidatedAction, attachments: &'a [Attachment]) -> Option<&'a Attachment> {
    match action.args.get("document").and_then(ArgValue::as_str) {
        Some(name) => attachments.iter().find(|a| a.name == name),
        None => attachments.first(),
    }
}

/// Parses a 1-based page selection such as `45`, `"44-46"` or `"3,88"`.
pub fn parse_pages(value: &ArgValue, page_count: usize) -> Option<Vec<usize>> {
    let mut pages = Vec::new();
    let mut push_spec = |spec: &str| -> Option<()> {
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (lo, hi) = match part.split_once('-') {
                Some((a, b)) => (a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?),
                None => {
                    let n = part.parse::<usize>().ok()?;
                    (n, n)
                }
            };
            if lo == 0 || lo > hi || hi > page_count {
                return None;
            }
            pages.extend(lo..=hi);
        }
        Some(())
    };
    match value {
        ArgValue::Int(n) if *n > 0 => push_spec(&n.to_string())?,
        ArgValue::Str(s) => push_spec(s)?,
        ArgValue::List(items) => {
            for item in items {
                push_spec(item)?;
            }
        }
        _ => return None,
    }
    pages.dedup();
    (!pages.is_empty()).then_some(pages)
}

/// Builds the outbound request, including only the attachment context the
/// tool's binding and the call's selector allow.
pub fn enforce_minimal_context(
    descriptor: &ToolDescriptor,
    action: &ValidatedAction,
    attachments: &[Attachment],
) -> Result<ToolRequest, PrivacyViolation> {
    let mut request = ToolRequest { tool: descriptor.name.clone(), args: action.args_json(), attachment: None };
    if let Some(binding) = &descriptor.signature.attachment {
        if let Some(doc) = select_attachment(action, attachments) {
            let selection = binding.selector.as_deref().and_then(|sel| action.args.get(sel).map(|v| (sel, v)));
            let pages = match selection {
                Some((_, value)) => parse_pages(value, doc.page_count()).ok_or_else(|| PrivacyViolation::BadSelection {
                    attachment: doc.name.clone(),
                    selection: value.to_string(),
                    pages: doc.page_count(),
                })?,
                None if descriptor.locality == Locality::Remote => {
                    return Err(match &binding.selector {
                        Some(selector) => PrivacyViolation::WholeAttachmentToRemote {
                            tool: descriptor.name.clone(),
                            attachment: doc.name.clone(),
                            selector: selector.clone(),
                        },
                        None => PrivacyViolation::UnscopedRemote { tool: descriptor.name.clone(), attachment: doc.name.clone() },
                    });
                }
                None => (1..=doc.page_count()).collect(),
            };
            request.attachment = Some(AttachmentPayload {
                name: doc.name.clone(),
                pages: pages.into_iter().map(|page| PagePayload { page, text: doc.pages[page - 1].clone() }).collect(),
            });
        }
    }
    if let Some(limit) = descriptor.signature.max_input_chars {
        let chars = request.payload_chars();
        if chars > limit {
            return Err(PrivacyViolation::OversizePayload { tool: descriptor.name.clone(), chars, limit });
        }
    }
    Ok(request)
}

/// What one outbound call carried.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub session_id: String,
    pub tool: String,
    pub locality: Locality,
    pub attachment: Option<String>,
    pub pages: Vec<usize>,
    pub payload_chars: usize,
}

/// Bounded log of outbound payloads.
#[derive(Debug)]
pub struct PrivacyAudit {
    records: Mutex<VecDeque<AuditRecord>>,
    capacity: usize,
}

impl Default for PrivacyAudit {
    fn default() -> Self {
        Self::with_capacity(10_000)
    }
}

impl PrivacyAudit {
    pub fn with_capacity(capacity: usize) -> Self {
        Self { records: Mutex::new(VecDeque::new()), capacity }
    }

    pub fn record(&self, session_id: &str, descriptor: &ToolDescriptor, request: &ToolRequest) {
        let record = AuditRecord {
            session_id: session_id.to_string(),
            tool: descriptor.name.clone(),
            locality: descriptor.locality,
            attachment: request.attachment.as_ref().map(|a| a.name.clone()),
            pages: request.attachment.iter().flat_map(|a| a.pages.iter().map(|p| p.page)).collect(),
            payload_chars: request.payload_chars(),
        };
        let mut records = self.records.lock().expect("audit lock");
        if records.len() == self.capacity {
            records.pop_front();
        }
        records.push_back(record);
    }

    pub fn records(&self) -> Vec<AuditRecord> {
        self.records.lock().expect("audit lock").iter().cloned().collect()
    }

    pub fn for_session(&self, session_id: &str) -> Vec<AuditRecord> {
        self.records.lock().expect("audit lock").iter().filter(|r| r.session_id == session_id).cloned().collect()
    }
}
