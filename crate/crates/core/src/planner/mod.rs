//! Turning a task into a sequence of planner turns.

pub mod grammar;
pub mod prompt;
pub mod scratchpad;
pub mod session;
pub mod stream;

pub use grammar::{parse_planner_output, ParseFailure, PlannerBody, PlannerOutput};
pub use prompt::{assemble_prompt, attachment_manifest, AssembledPrompt, PromptBudget, PromptError, PromptInputs};
pub use scratchpad::{compact_scratchpad, CompactedPad, EntryKind, Scratchpad, ScratchpadEntry, ScratchpadError, TurnBlock};
pub use session::{scratchpad_from_events, Orchestrator, SessionConfig, SessionOutcome, SessionState, SessionStatus};
pub use stream::{StreamOutcome, StreamParser};
