//! Incremental parsing of streamed planner output.
//!
//! Calls are released as soon as the text fixes them (closing parenthesis
//! plus the following separator decision), so tools can start while the
//! backend is still generating.

use super::grammar::{find_keyword, parse_planner_output, scan_call_line, Keyword, LineStatus, PlannerOutput};
use crate::action::{Action, GroupId};

#[derive(Debug)]
pub struct StreamParser {
    buf: String,
    group: GroupId,
    emitted: usize,
    /// The action line turned out malformed; nothing more is released.
    halted: bool,
}

/// Outcome of a finished stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutcome {
    /// Batch parse of the full text.
    pub output: PlannerOutput,
    /// Calls the batch parse found that were not released during streaming.
    pub remaining: Vec<Action>,
}

impl StreamParser {
    pub fn new(group: GroupId) -> Self {
        Self { buf: String::new(), group, emitted: 0, halted: false }
    }

    pub fn text(&self) -> &str {
        &self.buf
    }

    pub fn emitted(&self) -> usize {
        self.emitted
    }

    /// Text before the action line, once that line has begun.
    pub fn thought_if_settled(&self) -> Option<Option<String>> {
        match find_keyword(&self.buf) {
            Some(Keyword::Action { line_start, .. }) => Some(super::grammar::thought_of(&self.buf[..line_start])),
            _ => None,
        }
    }

    /// Feeds a chunk and returns newly completed calls.
    pub fn push(&mut self, chunk: &str) -> Vec<Action> {
        self.buf.push_str(chunk);
        if self.halted {
            return Vec::new();
        }
        let Some(Keyword::Action { body_start, .. }) = find_keyword(&self.buf) else {
            return Vec::new();
        };
        let rest = &self.buf[body_start..];
        let (line, at_end) = match rest.find('\n') {
            Some(i) => (&rest[..i], true),
            None => (rest, false),
        };
        let scan = scan_call_line(line, at_end, self.group);
        if matches!(scan.status, LineStatus::Malformed(_)) || (at_end && scan.status == LineStatus::Complete) {
            self.halted = true;
        }
        let fresh: Vec<Action> = scan.calls.into_iter().skip(self.emitted).collect();
        self.emitted += fresh.len();
        fresh
    }

    /// Completes the stream normally.
    pub fn finish(self) -> StreamOutcome {
        let output = parse_planner_output(&self.buf, self.group);
        let remaining = output.actions().iter().skip(self.emitted).cloned().collect();
        StreamOutcome { output, remaining }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::CallMode;

    fn feed(parser: &mut StreamParser, chunks: &[&str]) -> Vec<Vec<Action>> {
        chunks.iter().map(|c| parser.push(c)).collect()
    }

    #[test]
    fn search_is_released_before_the_stream_ends() {
        let mut parser = StreamParser::new(GroupId(1));
        let releases = feed(
            &mut parser,
            &["Thought: look it up\nAction: WebSearch(\"tidal energy ca", "pacity report\")", " && PDF", "Parser(page=2)"],
        );
        assert!(releases[0].is_empty());
        assert!(releases[1].is_empty(), "separator decision still pending");
        assert_eq!(releases[2].len(), 1);
        assert_eq!(releases[2][0].tool, "WebSearch");
        assert!(releases[3].is_empty());
        let outcome = parser.finish();
        assert_eq!(outcome.remaining.len(), 1);
        assert_eq!(outcome.remaining[0].tool, "PDFParser");
        assert_eq!(outcome.output.actions().len(), 2);
    }

    #[test]
    fn newline_settles_the_last_call() {
        let mut parser = StreamParser::new(GroupId(1));
        assert!(parser.push("Action: A()").is_empty());
        let released = parser.push("\n");
        assert_eq!(released.len(), 1);
        assert!(parser.finish().remaining.is_empty());
    }

    #[test]
    fn background_calls_release_once_the_suffix_is_seen() {
        let mut parser = StreamParser::new(GroupId(3));
        assert!(parser.push("Action: A() &").is_empty());
        let released = parser.push(" && B()");
        assert_eq!(released.len(), 1);
        assert_eq!(released[0].mode, CallMode::Background);
    }

    #[test]
    fn interrupted_mid_call_releases_nothing() {
        let mut parser = StreamParser::new(GroupId(1));
        assert!(parser.push("Action: PDFParser(pa").is_empty());
        assert_eq!(parser.emitted(), 0);
    }

    #[test]
    fn malformed_tail_keeps_earlier_calls_only() {
        let mut parser = StreamParser::new(GroupId(1));
        let first = parser.push("Action: A() && ");
        assert_eq!(first.len(), 1);
        assert!(parser.push("B(x=oops) && C()").is_empty());
        let outcome = parser.finish();
        assert!(outcome.output.failure().is_some());
        assert!(outcome.remaining.is_empty());
    }

    #[test]
    fn thought_settles_with_the_action_line() {
        let mut parser = StreamParser::new(GroupId(1));
        parser.push("Thought: hmm");
        assert_eq!(parser.thought_if_settled(), None);
        parser.push("\nAction: ");
        assert_eq!(parser.thought_if_settled(), Some(Some("hmm".into())));
    }

    #[test]
    fn final_answers_release_no_calls() {
        let mut parser = StreamParser::new(GroupId(1));
        assert!(parser.push("Thought: done\nFinal Answer: A() && B()").is_empty());
        assert_eq!(parser.finish().output.final_answer(), Some("A() && B()"));
    }
}
