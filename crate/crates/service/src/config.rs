//! Service configuration, read from TOML.
//!
//! ```toml
//! listen = "127.0.0.1:7070"
//! trace_dir = "traces"
//! tools = "tools.json"
//! builtin_tools = ["documents"]
//!
//! [limits]
//! max_sessions = 64
//!
//! [session]
//! max_turns = 10
//!
//! [backend]
//! kind = "http"
//! base_url = "http://127.0.0.1:8000/v1"
//! model = "gpt-4o"
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use reactor_core::backends::HttpBackendConfig;
use reactor_core::{DispatcherConfig, Script, SessionConfig};
use serde::{Deserialize, Serialize};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7070";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    /// Directory for per-session JSONL traces.
    pub trace_dir: Option<PathBuf>,
    /// Registry config file loaded at startup.
    pub tools: Option<PathBuf>,
    pub builtin_tools: Vec<BuiltinTools>,
    pub limits: Limits,
    /// Defaults for every session; submissions may override `max_turns`.
    pub session: SessionConfig,
    pub backend: BackendSettings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: DEFAULT_LISTEN.into(),
            trace_dir: None,
            tools: None,
            builtin_tools: Vec::new(),
            limits: Limits::default(),
            session: SessionConfig::default(),
            backend: BackendSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub max_sessions: usize,
    pub worker_limit: usize,
    pub default_timeout_ms: u64,
    pub sequential: bool,
}

impl Default for Limits {
    fn default() -> Self {
        let d = DispatcherConfig::default();
        Self {
            max_sessions: 64,
            worker_limit: d.worker_limit,
            default_timeout_ms: d.default_timeout.as_millis() as u64,
            sequential: false,
        }
    }
}

impl Limits {
    pub fn dispatcher_config(&self) -> DispatcherConfig {
        DispatcherConfig {
            default_timeout: Duration::from_millis(self.default_timeout_ms),
            worker_limit: self.worker_limit,
            sequential: self.sequential,
            ..DispatcherConfig::default()
        }
    }
}

/// In-process tool sets that can be mounted by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinTools {
    /// DocSearch, PDFParser and Summarizer over the bundled sample report.
    Documents,
}

/// Which planner backend sessions use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSettings {
    Http(HttpBackendConfig),
    /// Replays a script file; every session starts from its first step.
    Scripted { script: PathBuf },
}

impl Default for BackendSettings {
    fn default() -> Self {
        BackendSettings::Http(HttpBackendConfig::default())
    }
}

/// A backend choice carried by a task submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSelection {
    Http(HttpBackendConfig),
    Scripted { script: Script },
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Loads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut config =
            Self::from_toml(&text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.rebase(base);
        config.validate()?;
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.trace_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.tools.as_mut() {
            fix(p);
        }
        if let BackendSettings::Scripted { script } = &mut self.backend {
            fix(script);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.limits.max_sessions == 0 {
            return Err(ConfigError::Invalid("limits.max_sessions must be at least 1".into()));
        }
        if self.limits.worker_limit == 0 {
            return Err(ConfigError::Invalid("limits.worker_limit must be at least 1".into()));
        }
        if self.session.max_turns == 0 {
            return Err(ConfigError::Invalid("session.max_turns must be at least 1".into()));
        }
        Ok(())
    }
}
