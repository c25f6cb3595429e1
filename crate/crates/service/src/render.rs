//! One-line rendering of events for terminals.

use std::io::IsTerminal;

use reactor_core::{Event, EventType};

const DIM: &str = "\x1b[2m";
const BOLD: &str = "\x1b[1m";
const CYAN: &str = "\x1b[36m";
const RED: &str = "\x1b[31m";
const RESET: &str = "\x1b[0m";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum ColorChoice {
    #[default]
    Auto,
    Always,
    Never,
}

impl ColorChoice {
    /// `auto` styles only an interactive stdout without `NO_COLOR`.
    pub fn enabled(self) -> bool {
        match self {
            ColorChoice::Always => true,
            ColorChoice::Never => false,
            ColorChoice::Auto => std::io::stdout().is_terminal() && std::env::var_os("NO_COLOR").is_none(),
        }
    }
}

/// `type[tool]: text`, with newlines escaped so every event is one line.
/// Styled output dims thoughts, highlights the tool label of actions and
/// leaves results as they are.
pub fn render_event(event: &Event, styled: bool) -> String {
    let tool = event.content.get("tool").and_then(|t| t.as_str());
    let label = tool.map(|t| format!("[{t}]")).unwrap_or_default();
    let text = event.text().replace('\r', "\\r").replace('\n', "\\n");
    let kind = event.event_type.as_str();
    if !styled {
        return format!("{kind}{label}: {text}");
    }
    match event.event_type {
        EventType::Thought => format!("{DIM}{kind}: {text}{RESET}"),
        EventType::Action => format!("{kind}{BOLD}{CYAN}{label}{RESET}: {text}"),
        EventType::Error => format!("{RED}{kind}{label}{RESET}: {text}"),
        EventType::FinalAnswer => format!("{BOLD}{kind}{label}: {text}{RESET}"),
        _ => format!("{kind}{label}: {text}"),
    }
}

/// Removes the escape sequences [`render_event`] adds.
pub fn strip_style(line: &str) -> String {
    [DIM, BOLD, CYAN, RED, RESET].iter().fold(line.to_string(), |s, code| s.replace(code, ""))
}
