//! Tool registry: descriptors, hot add/remove, signature validation and
//! per-tool capacity leasing.

mod capacity;
mod descriptor;
mod prompt;
mod validate;

use std::path::Path;
use std::sync::{Arc, RwLock};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::time::Instant;

pub use capacity::{CapacityGate, CapacitySnapshot, Lease, LeaseGrant, QueueFull, QueuedLease};
pub use descriptor::{
    AttachmentBinding, Locality, ParamSpec, SemanticType, ToolDescriptor, ToolStatus, TypeSignature,
    DEFAULT_QUEUE_LIMIT,
};
pub use prompt::{cost_tiers, render_tool_prompt, CostTier};
pub use validate::{coerce, validate_action, validate_against, ValidatedAction, ValidationFailure};

use crate::observability::{EventHub, EventType};

/// Stream id under which registry changes are published.
pub const REGISTRY_STREAM: &str = "registry";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("a tool named `{0}` is already registered")]
    DuplicateName(String),
    #[error("invalid descriptor field `{field}`: {reason}")]
    InvalidDescriptor { field: String, reason: String },
    #[error("no tool named `{0}`")]
    NotFound(String),
    #[error("tool `{name}` is unavailable ({status:?})")]
    Unavailable { name: String, status: ToolStatus },
    #[error("tool `{name}` has {queued} queued calls, the limit")]
    CapacityExhausted { name: String, queued: usize },
    #[error("registry config: {0}")]
    Config(String),
}

impl RegistryError {
    pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Self {
        RegistryError::InvalidDescriptor { field: field.to_string(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum RegistryChange {
    Registered { name: String },
    Removed { name: String },
    Quarantined { name: String, cooldown_ms: u64 },
}

#[derive(Debug)]
struct Entry {
    descriptor: ToolDescriptor,
    gate: Arc<CapacityGate>,
    quarantined_until: Option<Instant>,
}

impl Entry {
    fn status_at(&self, now: Instant) -> ToolStatus {
        match self.descriptor.status {
            ToolStatus::Removed => ToolStatus::Removed,
            _ if self.quarantined_until.is_some_and(|until| now < until) => ToolStatus::Quarantined,
            _ => ToolStatus::Available,
        }
    }
}

#[derive(Debug, Default)]
struct Inner {
    tools: IndexMap<String, Entry>,
    version: u64,
    cost_ceiling: Option<f64>,
}

/// Shared tool registry. Cheap to read concurrently; writers are exclusive.
#[derive(Debug, Default)]
pub struct Registry {
    inner: RwLock<Inner>,
    events: Option<Arc<EventHub>>,
}

/// State of one tool as captured in a snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolView {
    /// `status` is the effective status at snapshot time.
    pub descriptor: ToolDescriptor,
    pub capacity: CapacitySnapshot,
}

impl ToolView {
    pub fn name(&self) -> &str {
        &self.descriptor.name
    }

    pub fn status(&self) -> ToolStatus {
        self.descriptor.status
    }
}

/// Immutable view of the registry at one instant, in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrySnapshot {
    pub version: u64,
    pub tools: Vec<ToolView>,
    pub cost_ceiling: Option<f64>,
}

impl RegistrySnapshot {
    pub fn get(&self, name: &str) -> Option<&ToolView> {
        self.tools.iter().find(|t| t.descriptor.name == name)
    }

    /// Tools the planner may be told about: available and within the cost
    /// ceiling, if one is set.
    pub fn offered(&self) -> impl Iterator<Item = &ToolView> {
        self.tools.iter().filter(move |t| {
            t.descriptor.status == ToolStatus::Available
                && match (self.cost_ceiling, t.descriptor.cost_per_1k_tokens) {
                    (Some(ceiling), Some(cost)) => cost <= ceiling,
                    _ => true,
                }
        })
    }

    pub fn is_empty(&self) -> bool {
        self.offered().next().is_none()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ConfigDocument {
    List(Vec<ToolDescriptor>),
    Wrapped { tools: Vec<ToolDescriptor> },
}

/// Parses a registry config document: either a JSON array of descriptors or
/// an object with a `tools` array.
pub fn parse_config(text: &str) -> Result<Vec<ToolDescriptor>, RegistryError> {
    match serde_json::from_str::<ConfigDocument>(text) {
        Ok(ConfigDocument::List(tools)) | Ok(ConfigDocument::Wrapped { tools }) => Ok(tools),
        Err(e) => Err(RegistryError::Config(e.to_string())),
    }
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Publishes registry changes to `hub` under [`REGISTRY_STREAM`].
    pub fn with_events(hub: Arc<EventHub>) -> Self {
        hub.open(REGISTRY_STREAM);
        Self { inner: RwLock::default(), events: Some(hub) }
    }

    fn publish(&self, change: RegistryChange) {
        if let Some(hub) = &self.events {
            let content = serde_json::to_value(&change).expect("serializable change");
            hub.emit(REGISTRY_STREAM, EventType::RegistryChanged, content);
        }
    }

    pub fn register_tool(&self, mut descriptor: ToolDescriptor) -> Result<(), RegistryError> {
        descriptor.validate()?;
        descriptor.status = ToolStatus::Available;
        let name = descriptor.name.clone();
        {
            let mut inner = self.inner.write().expect("registry lock");
            if let Some(existing) = inner.tools.get(&name) {
                if existing.descriptor.status != ToolStatus::Removed {
                    return Err(RegistryError::DuplicateName(name));
                }
                // A removed name is free again; the fresh entry goes to the end.
                inner.tools.shift_remove(&name);
            }
            let gate = CapacityGate::new(descriptor.max_parallel, descriptor.queue_limit());
            inner.tools.insert(name.clone(), Entry { descriptor, gate, quarantined_until: None });
            inner.version += 1;
        }
        tracing::debug!(tool = %name, "registered tool");
        self.publish(RegistryChange::Registered { name });
        Ok(())
    }

    /// Loads every descriptor from a config document, stopping at the first
    /// rejected one.
    pub fn load_config_str(&self, text: &str) -> Result<usize, RegistryError> {
        let tools = parse_config(text)?;
        let count = tools.len();
        for tool in tools {
            self.register_tool(tool)?;
        }
        Ok(count)
    }

    pub fn load_config_file(&self, path: impl AsRef<Path>) -> Result<usize, RegistryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| RegistryError::Config(format!("{}: {e}", path.display())))?;
        self.load_config_str(&text)
    }

    /// Marks the tool removed. Leases already held stay valid until released.
    pub fn deregister_tool(&self, name: &str) -> Result<(), RegistryError> {
        {
            let mut inner = self.inner.write().expect("registry lock");
            match inner.tools.get_mut(name) {
                Some(entry) if entry.descriptor.status != ToolStatus::Removed => {
                    entry.descriptor.status = ToolStatus::Removed;
                }
                _ => return Err(RegistryError::NotFound(name.to_string())),
            }
            inner.version += 1;
        }
        self.publish(RegistryChange::Removed { name: name.to_string() });
        Ok(())
    }

    /// Hides the tool from planning and dispatch until `until`.
    pub fn quarantine(&self, name: &str, until: Instant) -> Result<(), RegistryError> {
        let cooldown_ms = until.saturating_duration_since(Instant::now()).as_millis() as u64;
        {
            let mut inner = self.inner.write().expect("registry lock");
            let entry = inner.tools.get_mut(name).ok_or_else(|| RegistryError::NotFound(name.to_string()))?;
            entry.quarantined_until = Some(until);
            inner.version += 1;
        }
        self.publish(RegistryChange::Quarantined { name: name.to_string(), cooldown_ms });
        Ok(())
    }

    pub fn set_cost_ceiling(&self, ceiling: Option<f64>) {
        let mut inner = self.inner.write().expect("registry lock");
        inner.cost_ceiling = ceiling;
        inner.version += 1;
    }

    pub fn version(&self) -> u64 {
        self.inner.read().expect("registry lock").version
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        self.snapshot_at(Instant::now())
    }

    pub fn snapshot_at(&self, now: Instant) -> RegistrySnapshot {
        let inner = self.inner.read().expect("registry lock");
        let tools = inner
            .tools
            .values()
            .map(|entry| {
                let mut descriptor = entry.descriptor.clone();
                descriptor.status = entry.status_at(now);
                ToolView { descriptor, capacity: entry.gate.snapshot() }
            })
            .collect();
        RegistrySnapshot { version: inner.version, tools, cost_ceiling: inner.cost_ceiling }
    }

    /// Non-removed descriptors in registration order.
    pub fn list_tools(&self) -> Vec<ToolDescriptor> {
        self.snapshot().tools.into_iter().map(|t| t.descriptor).filter(|d| d.status != ToolStatus::Removed).collect()
    }

    pub fn descriptor(&self, name: &str) -> Option<ToolDescriptor> {
        self.snapshot().get(name).map(|t| t.descriptor.clone())
    }

    pub fn capacity(&self, name: &str) -> Option<CapacitySnapshot> {
        let inner = self.inner.read().expect("registry lock");
        inner.tools.get(name).map(|e| e.gate.snapshot())
    }

    /// Requests a concurrency slot for `name`.
    pub fn lease_capacity(&self, name: &str) -> Result<LeaseGrant, RegistryError> {
        let now = Instant::now();
        let gate = {
            let inner = self.inner.read().expect("registry lock");
            let entry = inner.tools.get(name).ok_or_else(|| RegistryError::NotFound(name.to_string()))?;
            let status = entry.status_at(now);
            if status != ToolStatus::Available {
                return Err(RegistryError::Unavailable { name: name.to_string(), status });
            }
            entry.gate.clone()
        };
        gate.acquire().map_err(|QueueFull| RegistryError::CapacityExhausted {
            name: name.to_string(),
            queued: gate.snapshot().queued,
        })
    }
}
