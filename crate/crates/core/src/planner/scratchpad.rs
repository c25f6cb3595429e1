//! The planner's working transcript and its compaction.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grammar::{ACTION_PREFIX, FINAL_PREFIX, THOUGHT_PREFIX};
use crate::action::GroupId;
use crate::cost::estimate_tokens;

/// Characters of each observation kept in a turn summary.
pub const DIGEST_CHARS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Thought,
    Action,
    Observation,
    Error,
    Final,
}

impl EntryKind {
    pub fn label(self) -> &'static str {
        match self {
            EntryKind::Thought => THOUGHT_PREFIX,
            EntryKind::Action => ACTION_PREFIX,
            EntryKind::Observation => "Observation:",
            EntryKind::Error => "Error:",
            EntryKind::Final => FINAL_PREFIX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScratchpadEntry {
    pub kind: EntryKind,
    pub content: String,
    pub turn: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<GroupId>,
}

impl ScratchpadEntry {
    pub fn new(kind: EntryKind, content: impl Into<String>, turn: u32, group: Option<GroupId>) -> Self {
        Self { kind, content: content.into(), turn, group }
    }

    /// Tool name of an Action entry (`Tool(...)`).
    pub fn tool(&self) -> Option<&str> {
        match self.kind {
            EntryKind::Action => self.content.split('(').next().map(str::trim),
            _ => None,
        }
    }
}

impl fmt::Display for ScratchpadEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.kind.label(), self.content)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScratchpadError {
    #[error("entry for turn {got} after turn {last}")]
    TurnRegressed { last: u32, got: u32 },
    #[error("{kind:?} entry references group {group} with no preceding action")]
    OrphanResult { kind: EntryKind, group: GroupId },
    #[error("observations must reference an action group")]
    MissingGroup,
}

/// Append-only, turn-ordered transcript.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scratchpad {
    entries: Vec<ScratchpadEntry>,
}

impl Scratchpad {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[ScratchpadEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&ScratchpadEntry> {
        self.entries.last()
    }

    pub fn append(&mut self, entry: ScratchpadEntry) -> Result<(), ScratchpadError> {
        if let Some(last) = self.entries.last() {
            if entry.turn < last.turn {
                return Err(ScratchpadError::TurnRegressed { last: last.turn, got: entry.turn });
            }
        }
        match (entry.kind, entry.group) {
            (EntryKind::Observation, None) => return Err(ScratchpadError::MissingGroup),
            (EntryKind::Observation | EntryKind::Error, Some(group)) => {
                let known = self.entries.iter().any(|e| e.kind == EntryKind::Action && e.group == Some(group));
                if !known {
                    return Err(ScratchpadError::OrphanResult { kind: entry.kind, group });
                }
            }
            _ => {}
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn render(&self) -> String {
        CompactedPad::from(self).render()
    }
}

/// One turn of a (possibly) compacted transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TurnBlock {
    Verbatim { turn: u32, entries: Vec<ScratchpadEntry> },
    Summary { turn: u32, tools: Vec<String>, digests: Vec<String> },
}

impl TurnBlock {
    pub fn turn(&self) -> u32 {
        match self {
            TurnBlock::Verbatim { turn, .. } | TurnBlock::Summary { turn, .. } => *turn,
        }
    }

    fn summarize(&self) -> TurnBlock {
        match self {
            TurnBlock::Summary { .. } => self.clone(),
            TurnBlock::Verbatim { turn, entries } => TurnBlock::Summary {
                turn: *turn,
                tools: entries.iter().filter_map(ScratchpadEntry::tool).map(str::to_string).collect(),
                digests: entries
                    .iter()
                    .filter_map(|e| match e.kind {
                        EntryKind::Observation => Some(e.content.chars().take(DIGEST_CHARS).collect()),
                        EntryKind::Error => Some(format!("error: {}", e.content.chars().take(DIGEST_CHARS).collect::<String>())),
                        _ => None,
                    })
                    .collect(),
            },
        }
    }
}

impl fmt::Display for TurnBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TurnBlock::Verbatim { entries, .. } => {
                for (i, entry) in entries.iter().enumerate() {
                    if i > 0 {
                        f.write_str("\n")?;
                    }
                    write!(f, "{entry}")?;
                }
                Ok(())
            }
            TurnBlock::Summary { turn, tools, digests } => {
                let tools = if tools.is_empty() { "no tools".to_string() } else { tools.join(", ") };
                let digest = if digests.is_empty() { "none".to_string() } else { digests.join(" | ") };
                write!(f, "Turn {turn}: called {tools}; result digest: {digest}")
            }
        }
    }
}

/// Transcript as rendered into a prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompactedPad {
    pub blocks: Vec<TurnBlock>,
}

impl From<&Scratchpad> for CompactedPad {
    fn from(pad: &Scratchpad) -> Self {
        let mut blocks: Vec<TurnBlock> = Vec::new();
        for entry in pad.entries() {
            match blocks.last_mut() {
                Some(TurnBlock::Verbatim { turn, entries }) if *turn == entry.turn => entries.push(entry.clone()),
                _ => blocks.push(TurnBlock::Verbatim { turn: entry.turn, entries: vec![entry.clone()] }),
            }
        }
        Self { blocks }
    }
}

impl CompactedPad {
    pub fn render(&self) -> String {
        self.blocks.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")
    }

    pub fn estimated_tokens(&self) -> u64 {
        estimate_tokens(&self.render())
    }
}

/// Fits the transcript to `budget_tokens` by summarizing every turn except
/// the newest `keep_verbatim`. Under budget it is returned unchanged, and
/// compacting a compacted pad changes nothing.
pub fn compact_scratchpad(pad: &CompactedPad, budget_tokens: u64, keep_verbatim: usize) -> CompactedPad {
    if pad.estimated_tokens() <= budget_tokens {
        return pad.clone();
    }
    let keep_from = pad.blocks.len().saturating_sub(keep_verbatim);
    CompactedPad {
        blocks: pad
            .blocks
            .iter()
            .enumerate()
            .map(|(i, block)| if i < keep_from { block.summarize() } else { block.clone() })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn turn_entries(turn: u32, observation: &str) -> Vec<ScratchpadEntry> {
        let g = Some(GroupId(turn as u64));
        vec![
            ScratchpadEntry::new(EntryKind::Thought, format!("thinking about step {turn}"), turn, None),
            ScratchpadEntry::new(EntryKind::Action, format!("Fetch(page={turn})"), turn, g),
            ScratchpadEntry::new(EntryKind::Observation, observation, turn, g),
        ]
    }

    fn padded(turns: u32, obs_len: usize) -> Scratchpad {
        let mut pad = Scratchpad::new();
        for t in 1..=turns {
            for e in turn_entries(t, &format!("{t}:{}", "x".repeat(obs_len))) {
                pad.append(e).unwrap();
            }
        }
        pad
    }

    #[test]
    fn append_enforces_order_and_grouping() {
        let mut pad = Scratchpad::new();
        pad.append(ScratchpadEntry::new(EntryKind::Thought, "t", 2, None)).unwrap();
        assert_eq!(
            pad.append(ScratchpadEntry::new(EntryKind::Thought, "t", 1, None)),
            Err(ScratchpadError::TurnRegressed { last: 2, got: 1 })
        );
        assert_eq!(
            pad.append(ScratchpadEntry::new(EntryKind::Observation, "o", 2, Some(GroupId(9)))),
            Err(ScratchpadError::OrphanResult { kind: EntryKind::Observation, group: GroupId(9) })
        );
        assert_eq!(pad.append(ScratchpadEntry::new(EntryKind::Observation, "o", 2, None)), Err(ScratchpadError::MissingGroup));
        // Planner-level errors (malformed output) carry no group.
        pad.append(ScratchpadEntry::new(EntryKind::Error, "malformed planner output", 2, None)).unwrap();
    }

    #[test]
    fn renders_entries_verbatim() {
        let mut pad = Scratchpad::new();
        for e in turn_entries(1, "Q1 2014 ARR: $5.2M") {
            pad.append(e).unwrap();
        }
        assert_eq!(
            pad.render(),
            "Thought: thinking about step 1\nAction: Fetch(page=1)\nObservation: Q1 2014 ARR: $5.2M"
        );
        assert_eq!(pad.entries()[1].tool(), Some("Fetch"));
    }

    #[test]
    fn small_pad_is_untouched() {
        let pad = CompactedPad::from(&padded(3, 10));
        assert_eq!(compact_scratchpad(&pad, 10_000, 2), pad);
    }

    #[test]
    fn twelve_turns_keep_the_last_two_verbatim() {
        let obs_len = 400;
        let pad = CompactedPad::from(&padded(12, obs_len));
        // Every verbatim turn renders to:
        //   "Thought: thinking about step N\nAction: Fetch(page=N)\nObservation: N:xxx…"
        let verbatim_len = |t: u32| {
            let d = t.to_string().len();
            ("Thought: thinking about step ".len() + d) + 1 + ("Action: Fetch(page=)".len() + d) + 1 + ("Observation: ".len() + d + 1 + obs_len)
        };
        let full: usize = (1..=12).map(verbatim_len).sum::<usize>() + 11;
        assert_eq!(pad.render().len(), full);
        let budget = (full as u64 / 4) / 2;
        let compact = compact_scratchpad(&pad, budget, 2);
        for (i, block) in compact.blocks.iter().enumerate() {
            let turn = i as u32 + 1;
            assert_eq!(block.turn(), turn);
            assert_eq!(matches!(block, TurnBlock::Verbatim { .. }), turn >= 11, "turn {turn}");
        }
        // Summary: "Turn N: called Fetch; result digest: " + first 200 chars of the observation.
        let summary_len = |t: u32| format!("Turn {t}: called Fetch; result digest: ").len() + DIGEST_CHARS;
        let expected: usize = (1..=10).map(summary_len).sum::<usize>() + verbatim_len(11) + verbatim_len(12) + 11;
        let rendered = compact.render();
        assert_eq!(rendered.len(), expected);
        assert!(rendered.ends_with(&padded(12, obs_len).entries()[35].to_string()));
        assert!(rendered.starts_with(&format!("Turn 1: called Fetch; result digest: 1:{}", "x".repeat(198))));
    }

    #[test]
    fn summaries_mention_errors_and_empty_turns() {
        let mut pad = Scratchpad::new();
        let g = Some(GroupId(1));
        pad.append(ScratchpadEntry::new(EntryKind::Action, "PDFParser(page=3)", 1, g)).unwrap();
        pad.append(ScratchpadEntry::new(EntryKind::Error, "PDFParser timed out", 1, g)).unwrap();
        pad.append(ScratchpadEntry::new(EntryKind::Error, "malformed planner output", 2, None)).unwrap();
        for e in turn_entries(3, "ok") {
            pad.append(e).unwrap();
        }
        let compact = compact_scratchpad(&CompactedPad::from(&pad), 1, 1);
        assert_eq!(
            compact.blocks[0].to_string(),
            "Turn 1: called PDFParser; result digest: error: PDFParser timed out"
        );
        assert_eq!(
            compact.blocks[1].to_string(),
            "Turn 2: called no tools; result digest: error: malformed planner output"
        );
    }

    proptest! {
        #[test]
        fn compaction_is_idempotent(turns in 0u32..15, obs_len in 0usize..600, budget in 0u64..3000, keep in 0usize..4) {
            let pad = CompactedPad::from(&padded(turns, obs_len));
            let once = compact_scratchpad(&pad, budget, keep);
            let twice = compact_scratchpad(&once, budget, keep);
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.blocks.len() == pad.blocks.len());
            let verbatim = once.blocks.iter().rev().take_while(|b| matches!(b, TurnBlock::Verbatim { .. })).count();
            prop_assert!(verbatim >= keep.min(pad.blocks.len()));
        }
    }
}
