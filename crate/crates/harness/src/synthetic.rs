//! Tools with configurable latency, failure rate and canned responses.

use std::sync::Arc;
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use reactor_core::dispatcher::{handler_fn, SeededFaults, ToolHandler, ToolHost, ToolRequest};
use reactor_core::registry::{Locality, ParamSpec, RegistryError, SemanticType, TypeSignature};
use reactor_core::{Registry, ToolDescriptor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Latency {
    Fixed { ms: u64 },
    Uniform { min_ms: u64, max_ms: u64 },
}

impl Latency {
    pub fn fixed(ms: u64) -> Self {
        Latency::Fixed { ms }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Duration {
        match *self {
            Latency::Fixed { ms } => Duration::from_millis(ms),
            Latency::Uniform { min_ms, max_ms } if max_ms > min_ms => Duration::from_millis(rng.random_range(min_ms..=max_ms)),
            Latency::Uniform { min_ms, .. } => Duration::from_millis(min_ms),
        }
    }
}

fn default_response() -> String {
    "{tool} ok".into()
}

fn default_params() -> Vec<String> {
    vec!["q".into()]
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticToolSpec {
    pub name: String,
    pub latency: Latency,
    /// Applied by the dispatcher's fault injector, not inside the tool.
    #[serde(default)]
    pub failure_probability: f64,
    /// `{tool}` and `{<param>}` are replaced with the call's values.
    #[serde(default = "default_response")]
    pub response: String,
    #[serde(default = "one")]
    pub max_parallel: usize,
    #[serde(default)]
    pub cost_per_1k_tokens: Option<f64>,
    /// Optional string parameters.
    #[serde(default = "default_params")]
    pub params: Vec<String>,
    #[serde(default)]
    pub description: String,
}

impl SyntheticToolSpec {
    pub fn new(name: impl Into<String>, latency: Latency) -> Self {
        Self {
            name: name.into(),
            latency,
            failure_probability: 0.0,
            response: default_response(),
            max_parallel: 1,
            cost_per_1k_tokens: None,
            params: default_params(),
            description: String::new(),
        }
    }

    pub fn with_response(mut self, template: impl Into<String>) -> Self {
        self.response = template.into();
        self
    }

    pub fn with_max_parallel(mut self, n: usize) -> Self {
        self.max_parallel = n;
        self
    }

    pub fn with_failure_probability(mut self, p: f64) -> Self {
        self.failure_probability = p;
        self
    }

    pub fn endpoint(&self) -> String {
        format!("local://synthetic/{}", self.name)
    }

    pub fn descriptor(&self) -> ToolDescriptor {
        let params = self.params.iter().map(|p| ParamSpec::optional(p.clone(), SemanticType::String)).collect();
        let description = if self.description.is_empty() { format!("synthetic {} tool", self.name) } else { self.description.clone() };
        let mut d = ToolDescriptor::new(self.name.clone(), self.endpoint())
            .with_description(description)
            .with_signature(TypeSignature::new(params, SemanticType::String))
            .with_max_parallel(self.max_parallel)
            .with_locality(Locality::Local);
        if let Some(cost) = self.cost_per_1k_tokens {
            d = d.with_cost(cost);
        }
        d
    }

    /// Latency is drawn from a generator keyed on the seed and the call's
    /// arguments, so results do not depend on scheduling order.
    pub fn handler(&self, seed: u64) -> Arc<dyn ToolHandler> {
        let spec = self.clone();
        handler_fn(move |request: ToolRequest| {
            let spec = spec.clone();
            async move {
                let key = format!("{}:{}", spec.name, request.args);
                let mut rng = StdRng::seed_from_u64(seed ^ fnv1a(&key));
                tokio::time::sleep(spec.latency.sample(&mut rng)).await;
                Ok(render_template(&spec.response, &request))
            }
        })
    }
}

pub(crate) fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn render_template(template: &str, request: &ToolRequest) -> String {
    let mut out = template.replace("{tool}", &request.tool);
    if let Some(args) = request.args.as_object() {
        for (name, value) in args {
            let text = match value {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            out = out.replace(&format!("{{{name}}}"), &text);
        }
    }
    out
}

/// Registers and mounts every spec, returning the fault injector carrying
/// their failure probabilities.
pub fn install(specs: &[SyntheticToolSpec], seed: u64, registry: &Registry, host: &ToolHost) -> Result<SeededFaults, RegistryError> {
    let mut faults = SeededFaults::new(0.0, seed);
    for spec in specs {
        registry.register_tool(spec.descriptor())?;
        host.mount(spec.endpoint(), spec.handler(seed));
        if spec.failure_probability > 0.0 {
            faults = faults.with_tool(spec.name.clone(), spec.failure_probability);
        }
    }
    Ok(faults)
}
