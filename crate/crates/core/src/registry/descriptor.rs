use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::RegistryError;

/// Closed set of argument and output types a tool can declare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SemanticType {
    #[serde(rename = "string")]
    String,
    #[serde(rename = "integer")]
    Integer,
    #[serde(rename = "number")]
    Number,
    #[serde(rename = "boolean")]
    Boolean,
    #[serde(rename = "list[string]")]
    ListOfString,
}

impl fmt::Display for SemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SemanticType::String => "string",
            SemanticType::Integer => "integer",
            SemanticType::Number => "number",
            SemanticType::Boolean => "boolean",
            SemanticType::ListOfString => "list[string]",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: SemanticType,
    #[serde(default = "default_true")]
    pub required: bool,
}

fn default_true() -> bool {
    true
}

impl ParamSpec {
    pub fn required(name: impl Into<String>, ty: SemanticType) -> Self {
        Self { name: name.into(), ty, required: true }
    }

    pub fn optional(name: impl Into<String>, ty: SemanticType) -> Self {
        Self { name: name.into(), ty, required: false }
    }
}

/// Declares that a tool consumes a session attachment.
///
/// `selector` names the parameter that picks a sub-range (a page number or a
/// `"first-last"` range). Calls that omit it ask for the whole attachment.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttachmentBinding {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeSignature {
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    #[serde(default = "default_output")]
    pub output: SemanticType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_input_chars: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment: Option<AttachmentBinding>,
}

fn default_output() -> SemanticType {
    SemanticType::String
}

impl Default for TypeSignature {
    fn default() -> Self {
        Self { params: Vec::new(), output: SemanticType::String, max_input_chars: None, attachment: None }
    }
}

impl TypeSignature {
    pub fn new(params: Vec<ParamSpec>, output: SemanticType) -> Self {
        Self { params, output, ..Self::default() }
    }

    pub fn with_max_input_chars(mut self, limit: usize) -> Self {
        self.max_input_chars = Some(limit);
        self
    }

    pub fn with_attachment(mut self, selector: Option<&str>) -> Self {
        self.attachment = Some(AttachmentBinding { selector: selector.map(str::to_string) });
        self
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Usage string shown to the planner: `(page: integer, query?: string) -> string`.
    pub fn usage(&self) -> String {
        let params = self
            .params
            .iter()
            .map(|p| format!("{}{}: {}", p.name, if p.required { "" } else { "?" }, p.ty))
            .collect::<Vec<_>>()
            .join(", ");
        format!("({params}) -> {}", self.output)
    }

    fn validate(&self) -> Result<(), RegistryError> {
        let mut seen = HashSet::new();
        for param in &self.params {
            if !is_identifier(&param.name) {
                return Err(RegistryError::invalid("signature.params.name", format!("`{}` is not an identifier", param.name)));
            }
            if !seen.insert(param.name.as_str()) {
                return Err(RegistryError::invalid("signature.params", format!("duplicate parameter `{}`", param.name)));
            }
        }
        if self.max_input_chars == Some(0) {
            return Err(RegistryError::invalid("signature.max_input_chars", "must be positive"));
        }
        if let Some(selector) = self.attachment.as_ref().and_then(|a| a.selector.as_deref()) {
            if self.param(selector).is_none() {
                return Err(RegistryError::invalid(
                    "signature.attachment.selector",
                    format!("`{selector}` is not a declared parameter"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Locality {
    #[default]
    Local,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    #[default]
    Available,
    Quarantined,
    Removed,
}

pub const DEFAULT_QUEUE_LIMIT: usize = 32;

/// Registry entry describing one callable tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// `http(s)://` URL or an in-process `local://` handle.
    pub endpoint: String,
    #[serde(default)]
    pub signature: TypeSignature,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_per_1k_tokens: Option<f64>,
    #[serde(default)]
    pub locality: Locality,
    #[serde(default)]
    pub status: ToolStatus,
    /// Per-call deadline override in milliseconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    /// Queued leases beyond this are rejected as capacity-exhausted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_limit: Option<usize>,
}

fn default_max_parallel() -> usize {
    1
}

impl ToolDescriptor {
    pub fn new(name: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: String::new(),
            endpoint: endpoint.into(),
            signature: TypeSignature::default(),
            max_parallel: 1,
            cost_per_1k_tokens: None,
            locality: Locality::Local,
            status: ToolStatus::Available,
            timeout_ms: None,
            queue_limit: None,
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn with_signature(mut self, signature: TypeSignature) -> Self {
        self.signature = signature;
        self
    }

    pub fn with_max_parallel(mut self, max_parallel: usize) -> Self {
        self.max_parallel = max_parallel;
        self
    }

    pub fn with_cost(mut self, cost_per_1k_tokens: f64) -> Self {
        self.cost_per_1k_tokens = Some(cost_per_1k_tokens);
        self
    }

    pub fn with_locality(mut self, locality: Locality) -> Self {
        self.locality = locality;
        self
    }

    pub fn with_timeout_ms(mut self, timeout_ms: u64) -> Self {
        self.timeout_ms = Some(timeout_ms);
        self
    }

    pub fn with_queue_limit(mut self, queue_limit: usize) -> Self {
        self.queue_limit = Some(queue_limit);
        self
    }

    pub fn queue_limit(&self) -> usize {
        self.queue_limit.unwrap_or(DEFAULT_QUEUE_LIMIT)
    }

    pub(crate) fn validate(&self) -> Result<(), RegistryError> {
        if self.name.is_empty() {
            return Err(RegistryError::invalid("name", "must not be empty"));
        }
        if !is_identifier(&self.name) {
            return Err(RegistryError::invalid("name", format!("`{}` is not an identifier", self.name)));
        }
        if self.endpoint.trim().is_empty() {
            return Err(RegistryError::invalid("endpoint", "must not be empty"));
        }
        if self.max_parallel == 0 {
            return Err(RegistryError::invalid("max_parallel", "must be at least 1"));
        }
        if let Some(cost) = self.cost_per_1k_tokens {
            if !cost.is_finite() || cost < 0.0 {
                return Err(RegistryError::invalid("cost_per_1k_tokens", "must be a non-negative number"));
            }
        }
        if self.timeout_ms == Some(0) {
            return Err(RegistryError::invalid("timeout_ms", "must be positive"));
        }
        self.signature.validate()
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}
