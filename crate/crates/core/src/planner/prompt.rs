//! Planner prompt assembly.

use thiserror::Error;

use super::scratchpad::{compact_scratchpad, CompactedPad, Scratchpad};
use crate::cost::estimate_tokens;
use crate::dispatcher::Attachment;
use crate::registry::{render_tool_prompt, RegistrySnapshot};

pub const SYSTEM_BLOCK: &str = "You plan and carry out tasks with the help of tools. Reply in this format:\n\
Thought: <your reasoning>\n\
Action: Tool(arg=value) && Tool(arg=value)\n\
Calls joined by && run in parallel. Add & after a call to run it in the background.\n\
When you know the answer, reply with:\n\
Thought: <your reasoning>\n\
Final Answer: <answer>";

pub const BACKGROUND_NOTICE: &str = "Note: some tasks are running in the background; their results will appear as observations.";

pub const FORCE_FINAL: &str = "You are out of turns. Reply now with Final Answer: <your best answer>.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("prompt needs {needed} tokens but the context budget is {budget}")]
    ContextOverflow { needed: u64, budget: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptBudget {
    pub context_tokens: u64,
    /// Newest turns kept verbatim when compacting.
    pub keep_verbatim: usize,
}

impl Default for PromptBudget {
    fn default() -> Self {
        Self { context_tokens: 8192, keep_verbatim: 2 }
    }
}

/// Inputs to one planner prompt.
#[derive(Debug, Clone, Copy)]
pub struct PromptInputs<'a> {
    pub snapshot: &'a RegistrySnapshot,
    pub task: &'a str,
    pub attachments: &'a [Attachment],
    pub scratchpad: &'a Scratchpad,
    pub background_pending: bool,
    pub force_final: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledPrompt {
    pub text: String,
    pub compacted: bool,
}

/// Attachment names and sizes; contents never enter the prompt.
pub fn attachment_manifest(attachments: &[Attachment]) -> Option<String> {
    if attachments.is_empty() {
        return None;
    }
    let lines: Vec<String> = attachments
        .iter()
        .map(|a| format!("- {} ({} pages, {} chars)", a.name, a.page_count(), a.char_count()))
        .collect();
    Some(format!("Attachments:\n{}", lines.join("\n")))
}

/// System block, tool list, task, attachment manifest, then the transcript,
/// compacted if needed to fit the budget.
pub fn assemble_prompt(inputs: PromptInputs<'_>, budget: PromptBudget) -> Result<AssembledPrompt, PromptError> {
    let mut head = format!("{SYSTEM_BLOCK}\n\n{}\n\nTask: {}", render_tool_prompt(inputs.snapshot), inputs.task);
    if let Some(manifest) = attachment_manifest(inputs.attachments) {
        head.push('\n');
        head.push_str(&manifest);
    }
    let mut tail = String::new();
    if inputs.background_pending {
        tail.push('\n');
        tail.push_str(BACKGROUND_NOTICE);
    }
    if inputs.force_final {
        tail.push('\n');
        tail.push_str(FORCE_FINAL);
    }
    let join = |pad: &CompactedPad| {
        let rendered = pad.render();
        if rendered.is_empty() {
            format!("{head}{tail}")
        } else {
            format!("{head}\n{rendered}{tail}")
        }
    };
    let fixed = estimate_tokens(&head) + estimate_tokens(&tail) + 1;
    if fixed > budget.context_tokens {
        return Err(PromptError::ContextOverflow { needed: fixed, budget: budget.context_tokens });
    }
    let full = CompactedPad::from(inputs.scratchpad);
    let text = join(&full);
    if estimate_tokens(&text) <= budget.context_tokens {
        return Ok(AssembledPrompt { text, compacted: false });
    }
    let compact = compact_scratchpad(&full, budget.context_tokens - fixed, budget.keep_verbatim);
    let text = join(&compact);
    let needed = estimate_tokens(&text);
    if needed > budget.context_tokens {
        return Err(PromptError::ContextOverflow { needed, budget: budget.context_tokens });
    }
    Ok(AssembledPrompt { text, compacted: true })
}
