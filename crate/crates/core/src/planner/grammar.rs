//! Planner output grammar.
//!
//! ```text
//! output      := [ "Thought:" ] text NL ( action-line | final-line )
//! action-line := "Action:" call ( "&&" call )*
//! call        := Ident "(" [ arg ( "," arg )* [","] ] ")" [ "&" ]
//! arg         := [ Ident "=" ] value
//! value       := string | integer | number | "true" | "false" | "[" [ string ( "," string )* [","] ] "]"
//! final-line  := "Final Answer:" text
//! ```
//!
//! Strings are single- or double-quoted with `\" \' \\ \n \t \r` escapes. A
//! trailing `&` marks a background call. Everything after the action line is
//! ignored; the final answer runs to the end of the output.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::action::{render_call_line, Action, ArgValue, Argument, CallMode, GroupId};

pub const THOUGHT_PREFIX: &str = "Thought:";
pub const ACTION_PREFIX: &str = "Action:";
pub const FINAL_PREFIX: &str = "Final Answer:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub reason: String,
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.reason)
    }
}

impl ParseFailure {
    fn new(reason: impl Into<String>) -> Self {
        Self { reason: reason.into() }
    }
}

/// What the planner asked for this turn. Exactly one body, so a final answer
/// and tool calls can never coexist.
#[derive(Debug, Clone, PartialEq)]
pub enum PlannerBody {
    Actions(Vec<Action>),
    Final(String),
    Malformed(ParseFailure),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerOutput {
    pub thought: Option<String>,
    pub body: PlannerBody,
}

impl PlannerOutput {
    pub fn actions(&self) -> &[Action] {
        match &self.body {
            PlannerBody::Actions(actions) => actions,
            _ => &[],
        }
    }

    pub fn final_answer(&self) -> Option<&str> {
        match &self.body {
            PlannerBody::Final(text) => Some(text),
            _ => None,
        }
    }

    pub fn failure(&self) -> Option<&ParseFailure> {
        match &self.body {
            PlannerBody::Malformed(failure) => Some(failure),
            _ => None,
        }
    }

    /// Canonical text for this output; `None` for malformed outputs.
    pub fn render(&self) -> Option<String> {
        let mut out = String::new();
        if let Some(thought) = &self.thought {
            out.push_str(THOUGHT_PREFIX);
            out.push(' ');
            out.push_str(thought);
            out.push('\n');
        }
        match &self.body {
            PlannerBody::Actions(actions) => {
                out.push_str(ACTION_PREFIX);
                out.push(' ');
                out.push_str(&render_call_line(actions));
            }
            PlannerBody::Final(text) => {
                out.push_str(FINAL_PREFIX);
                out.push(' ');
                out.push_str(text);
            }
            PlannerBody::Malformed(_) => return None,
        }
        Some(out)
    }
}

/// Where the action or final line starts, if the text has one yet.
pub(crate) enum Keyword {
    Action { line_start: usize, body_start: usize },
    Final { body_start: usize },
}

/// Finds the first line (ignoring leading whitespace) that starts with a
/// body keyword. Only looks at lines long enough to be decided.
pub(crate) fn find_keyword(text: &str) -> Option<Keyword> {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_start();
        let lead = line.len() - trimmed.len();
        if trimmed.starts_with(ACTION_PREFIX) {
            return Some(Keyword::Action { line_start: offset, body_start: offset + lead + ACTION_PREFIX.len() });
        }
        if trimmed.starts_with(FINAL_PREFIX) {
            return Some(Keyword::Final { body_start: offset + lead + FINAL_PREFIX.len() });
        }
        offset += line.len();
    }
    None
}

pub(crate) fn thought_of(preamble: &str) -> Option<String> {
    let trimmed = preamble.trim();
    let body = trimmed.strip_prefix(THOUGHT_PREFIX).unwrap_or(trimmed).trim();
    (!body.is_empty()).then(|| body.to_string())
}

/// Parses one complete planner response. Never fails: malformed text yields
/// [`PlannerBody::Malformed`].
pub fn parse_planner_output(raw: &str, group: GroupId) -> PlannerOutput {
    match find_keyword(raw) {
        None => PlannerOutput {
            thought: thought_of(raw),
            body: PlannerBody::Malformed(ParseFailure::new("expected an `Action:` or `Final Answer:` line")),
        },
        Some(Keyword::Final { body_start }) => {
            let preamble_end = raw[..body_start].rfind(FINAL_PREFIX).expect("keyword present");
            let thought = thought_of(&raw[..preamble_end]);
            let text = raw[body_start..].trim();
            let body = if text.is_empty() {
                PlannerBody::Malformed(ParseFailure::new("empty final answer"))
            } else {
                PlannerBody::Final(text.to_string())
            };
            PlannerOutput { thought, body }
        }
        Some(Keyword::Action { line_start, body_start }) => {
            let thought = thought_of(&raw[..line_start]);
            let line = raw[body_start..].split('\n').next().unwrap_or("");
            let scan = scan_call_line(line, true, group);
            let body = match scan.status {
                LineStatus::Complete => PlannerBody::Actions(scan.calls),
                LineStatus::Malformed(failure) => PlannerBody::Malformed(failure),
                LineStatus::Incomplete => unreachable!("complete scans never stay incomplete"),
            };
            PlannerOutput { thought, body }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LineStatus {
    Complete,
    /// More input could still complete the line.
    Incomplete,
    Malformed(ParseFailure),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LineScan {
    /// Calls whose text and mode are fully determined.
    pub calls: Vec<Action>,
    pub status: LineStatus,
}

/// Scans an action line body. With `at_end == false` the text may be a
/// prefix of the eventual line; only calls that no continuation can change
/// are reported.
pub(crate) fn scan_call_line(line: &str, at_end: bool, group: GroupId) -> LineScan {
    let mut cursor = Cursor { chars: line.char_indices().collect(), pos: 0, at_end };
    let mut calls = Vec::new();
    let status = loop {
        cursor.skip_ws();
        if cursor.eof() {
            break if !at_end {
                LineStatus::Incomplete
            } else if calls.is_empty() {
                LineStatus::Malformed(ParseFailure::new("action line names no tool call"))
            } else {
                LineStatus::Malformed(ParseFailure::new("dangling `&&` at end of action line"))
            };
        }
        let (tool, args) = match cursor.call() {
            Ok(call) => call,
            Err(Halt::Incomplete) => break LineStatus::Incomplete,
            Err(Halt::Malformed(reason)) => break LineStatus::Malformed(ParseFailure::new(reason)),
        };
        // Decide the call's mode and what follows it.
        cursor.skip_ws();
        let mut action = Action { tool, args, mode: CallMode::Blocking, group };
        match cursor.peek() {
            None if !at_end => break LineStatus::Incomplete,
            None => {
                calls.push(action);
                break LineStatus::Complete;
            }
            Some('&') => match cursor.peek_at(1) {
                None if !at_end => break LineStatus::Incomplete,
                Some('&') => {
                    cursor.pos += 2;
                    calls.push(action);
                    continue;
                }
                _ => {
                    cursor.pos += 1;
                    action.mode = CallMode::Background;
                    calls.push(action);
                    cursor.skip_ws();
                    match (cursor.peek(), cursor.peek_at(1)) {
                        (None, _) if !at_end => break LineStatus::Incomplete,
                        (None, _) => break LineStatus::Complete,
                        (Some('&'), None) if !at_end => break LineStatus::Incomplete,
                        (Some('&'), Some('&')) => {
                            cursor.pos += 2;
                            continue;
                        }
                        _ => break LineStatus::Malformed(ParseFailure::new("expected `&&` between calls")),
                    }
                }
            },
            Some(c) => break LineStatus::Malformed(ParseFailure::new(format!("unexpected `{c}` after call"))),
        }
    };
    LineScan { calls, status }
}

enum Halt {
    Incomplete,
    Malformed(String),
}

struct Cursor {
    chars: Vec<(usize, char)>,
    pos: usize,
    at_end: bool,
}

impl Cursor {
    fn eof(&self) -> bool {
        self.pos >= self.chars.len()
    }

    fn peek(&self) -> Option<char> {
        self.peek_at(0)
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.chars.get(self.pos + n).map(|(_, c)| *c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    /// End of input: incomplete while streaming, malformed at a true end.
    fn ran_out(&self, expected: &str) -> Halt {
        if self.at_end {
            Halt::Malformed(format!("unexpected end of line, expected {expected}"))
        } else {
            Halt::Incomplete
        }
    }

    fn expect(&mut self, want: char, what: &str) -> Result<(), Halt> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.ran_out(what)),
            Some(c) if c == want => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(Halt::Malformed(format!("expected {what}, found `{c}`"))),
        }
    }

    fn ident(&mut self) -> Result<String, Halt> {
        let start = self.pos;
        match self.peek() {
            None => return Err(self.ran_out("a name")),
            Some(c) if c.is_ascii_alphabetic() || c == '_' => self.pos += 1,
            Some(c) => return Err(Halt::Malformed(format!("expected a name, found `{c}`"))),
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        // A name cut off by the end of a streamed chunk may still grow.
        if self.eof() && !self.at_end {
            return Err(Halt::Incomplete);
        }
        Ok(self.chars[start..self.pos].iter().map(|(_, c)| c).collect())
    }

    fn call(&mut self) -> Result<(String, Vec<Argument>), Halt> {
        let tool = self.ident()?;
        self.expect('(', "`(`")?;
        let mut args = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return Err(self.ran_out("`)`")),
                Some(')') => {
                    self.pos += 1;
                    return Ok((tool, args));
                }
                _ => {}
            }
            args.push(self.argument()?);
            self.skip_ws();
            match self.peek() {
                None => return Err(self.ran_out("`,` or `)`")),
                Some(',') => self.pos += 1,
                Some(')') => {}
                Some(c) => return Err(Halt::Malformed(format!("expected `,` or `)`, found `{c}`"))),
            }
        }
    }

    fn argument(&mut self) -> Result<Argument, Halt> {
        let mark = self.pos;
        if matches!(self.peek(), Some(c) if c.is_ascii_alphabetic() || c == '_') {
            let name = self.ident()?;
            self.skip_ws();
            match self.peek() {
                None => return Err(self.ran_out("`=` or a value")),
                Some('=') => {
                    self.pos += 1;
                    let value = self.value()?;
                    return Ok(Argument::named(name, value));
                }
                _ => self.pos = mark,
            }
        }
        Ok(Argument::positional(self.value()?))
    }

    fn value(&mut self) -> Result<ArgValue, Halt> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.ran_out("a value")),
            Some(q @ ('"' | '\'')) => self.string(q).map(ArgValue::Str),
            Some('[') => self.list(),
            Some(c) if c == '-' || c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == '_' => match self.ident()?.as_str() {
                "true" => Ok(ArgValue::Bool(true)),
                "false" => Ok(ArgValue::Bool(false)),
                other => Err(Halt::Malformed(format!("bare word `{other}` is not a value; quote strings"))),
            },
            Some(c) => Err(Halt::Malformed(format!("unexpected `{c}` where a value was expected"))),
        }
    }

    fn string(&mut self, quote: char) -> Result<String, Halt> {
        self.pos += 1;
        let mut out = String::new();
        loop {
            let Some(c) = self.peek() else {
                return Err(self.ran_out("a closing quote"));
            };
            self.pos += 1;
            match c {
                c if c == quote => return Ok(out),
                '\\' => {
                    let Some(escaped) = self.peek() else {
                        return Err(self.ran_out("an escape"));
                    };
                    self.pos += 1;
                    out.push(match escaped {
                        'n' => '\n',
                        't' => '\t',
                        'r' => '\r',
                        other => other,
                    });
                }
                c => out.push(c),
            }
        }
    }

    fn list(&mut self) -> Result<ArgValue, Halt> {
        self.pos += 1;
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return Err(self.ran_out("`]`")),
                Some(']') => {
                    self.pos += 1;
                    return Ok(ArgValue::List(items));
                }
                Some(q @ ('"' | '\'')) => items.push(self.string(q)?),
                Some(c) => return Err(Halt::Malformed(format!("list items must be quoted strings, found `{c}`"))),
            }
            self.skip_ws();
            match self.peek() {
                None => return Err(self.ran_out("`,` or `]`")),
                Some(',') => self.pos += 1,
                Some(']') => {}
                Some(c) => return Err(Halt::Malformed(format!("expected `,` or `]`, found `{c}`"))),
            }
        }
    }

    fn number(&mut self) -> Result<ArgValue, Halt> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || matches!(c, '-' | '+' | '.')) {
            self.pos += 1;
        }
        if self.eof() && !self.at_end {
            return Err(Halt::Incomplete);
        }
        let text: String = self.chars[start..self.pos].iter().map(|(_, c)| c).collect();
        if is_integer_literal(&text) {
            if let Ok(i) = text.parse::<i64>() {
                return Ok(ArgValue::Int(i));
            }
        }
        if is_number_literal(&text) {
            if let Ok(n) = text.parse::<f64>() {
                if n.is_finite() {
                    return Ok(ArgValue::Num(n));
                }
            }
        }
        Err(Halt::Malformed(format!("`{text}` is not a number")))
    }
}

fn is_integer_literal(s: &str) -> bool {
    let digits = s.strip_prefix('-').unwrap_or(s);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

fn is_number_literal(s: &str) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], Some(&body[i + 1..])),
        None => (body, None),
    };
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    let digits_ok = |d: &str| d.bytes().all(|b| b.is_ascii_digit());
    if int.is_empty() || !digits_ok(int) || !digits_ok(frac) {
        return false;
    }
    if mantissa.contains('.') && frac.is_empty() {
        return false;
    }
    match exponent {
        None => true,
        Some(e) => {
            let e = e.strip_prefix(['+', '-']).unwrap_or(e);
            !e.is_empty() && digits_ok(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: GroupId = GroupId(7);

    #[test]
    fn two_parallel_calls_share_a_group() {
        let out = parse_planner_output(
            "Thought: I will retrieve the relevant pages.\n\
             Action: PDFParser(page=45, query=\"Extract ARR Q1 2014\") && PDFParser(page=88, query=\"Extract ARR Q1 2013\")",
            G,
        );
        assert_eq!(out.thought.as_deref(), Some("I will retrieve the relevant pages."));
        let actions = out.actions();
        assert_eq!(actions.len(), 2);
        assert!(actions.iter().all(|a| a.group == G && a.tool == "PDFParser" && a.mode == CallMode::Blocking));
        assert_eq!(actions[0].arg("page"), Some(&ArgValue::Int(45)));
        assert_eq!(actions[1].arg("query"), Some(&ArgValue::Str("Extract ARR Q1 2013".into())));
    }

    #[test]
    fn final_answer() {
        let out = parse_planner_output("Final Answer: 42", G);
        assert_eq!(out.final_answer(), Some("42"));
        assert!(out.actions().is_empty());
        assert_eq!(out.thought, None);
    }

    #[test]
    fn truncated_call_is_malformed() {
        let out = parse_planner_output("Action: PDFParser(page=", G);
        assert!(out.failure().is_some());
        assert!(out.actions().is_empty());
    }

    #[test]
    fn background_suffix_and_positional_values() {
        let out = parse_planner_output("Action: WebSearch('tidal energy capacity report') & && Calc(2.5, -3, true)", G);
        let actions = out.actions();
        assert_eq!(actions[0].mode, CallMode::Background);
        assert_eq!(actions[0].args, vec![Argument::positional(ArgValue::Str("tidal energy capacity report".into()))]);
        assert_eq!(actions[1].mode, CallMode::Blocking);
        assert_eq!(
            actions[1].args.iter().map(|a| a.value.clone()).collect::<Vec<_>>(),
            vec![ArgValue::Num(2.5), ArgValue::Int(-3), ArgValue::Bool(true)]
        );
    }

    #[test]
    fn string_lists() {
        let out = parse_planner_output(
            "Thought: compare\nAction: Summarizer(texts=[\"Q1 2014 ARR: $5.2M\", 'Q1 2013 ARR: $4.6M',], prompt=\"Compare\")",
            G,
        );
        assert_eq!(
            out.actions()[0].arg("texts"),
            Some(&ArgValue::List(vec!["Q1 2014 ARR: $5.2M".into(), "Q1 2013 ARR: $4.6M".into()]))
        );
    }

    #[test]
    fn malformed_cases() {
        for raw in [
            "",
            "Thought: only thinking",
            "Action:",
            "Action: Foo(x=bar)",
            "Action: Foo() Bar()",
            "Action: Foo() &&",
            "Action: Foo() & &Bar()",
            "Action: Foo(1.)",
            "Action: Foo(\"unterminated)",
            "Final Answer:   ",
        ] {
            assert!(parse_planner_output(raw, G).failure().is_some(), "{raw:?} should be malformed");
        }
    }

    #[test]
    fn thought_prefix_is_optional_and_trailing_lines_ignored() {
        let out = parse_planner_output("Let me look.\n  Action: Foo()\nObservation: hallucinated", G);
        assert_eq!(out.thought.as_deref(), Some("Let me look."));
        assert_eq!(out.actions().len(), 1);
    }

    #[test]
    fn action_line_wins_over_later_final() {
        let out = parse_planner_output("Action: Foo()\nFinal Answer: no", G);
        assert_eq!(out.actions().len(), 1);
        assert_eq!(out.final_answer(), None);
    }

    #[test]
    fn render_is_canonical() {
        let raw = "Thought:  x \nAction: Foo( a = 1 ,b='q\"' )&&Bar()";
        let out = parse_planner_output(raw, G);
        assert_eq!(out.render().unwrap(), "Thought: x\nAction: Foo(a=1, b=\"q\\\"\") && Bar()");
        assert_eq!(parse_planner_output(&out.render().unwrap(), G), out);
    }

    #[test]
    fn prefix_scan_reports_only_decided_calls() {
        let scan = scan_call_line(" A(x=1) && B(", false, G);
        assert_eq!(scan.calls.len(), 1);
        assert_eq!(scan.status, LineStatus::Incomplete);
        // Closing paren seen but the separator decision is still open.
        let scan = scan_call_line(" A(x=1) ", false, G);
        assert!(scan.calls.is_empty());
        let scan = scan_call_line(" A(x=1) &", false, G);
        assert!(scan.calls.is_empty());
        let scan = scan_call_line(" A(x=1) & ", false, G);
        assert_eq!(scan.calls[0].mode, CallMode::Background);
        let scan = scan_call_line(" A(x=12", false, G);
        assert_eq!(scan.status, LineStatus::Incomplete);
    }

    #[test]
    fn number_literals() {
        assert!(is_number_literal("1e-9"));
        assert!(is_number_literal("-0.5"));
        assert!(is_number_literal("3.0E+2"));
        assert!(!is_number_literal("1e"));
        assert!(!is_number_literal("1.2.3"));
        assert!(!is_number_literal("--1"));
        assert!(!is_number_literal(".5"));
    }
}
