//! Deterministic failure injection for robustness experiments.

use std::collections::HashMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Decides whether a call should be turned into a tool error.
pub trait FaultInjector: Send + Sync {
    /// `sequence` numbers the session's dispatches from zero.
    fn inject(&self, session_id: &str, sequence: u64, tool: &str) -> Option<String>;
}

/// Fails each call independently with probability `p`. The decision depends
/// only on the seed, session id and sequence number, so reruns agree.
#[derive(Debug, Clone)]
pub struct SeededFaults {
    /// Applies to tools without an override.
    pub probability: f64,
    pub seed: u64,
    pub overrides: HashMap<String, f64>,
}

impl SeededFaults {
    pub fn new(probability: f64, seed: u64) -> Self {
        Self { probability: probability.clamp(0.0, 1.0), seed, overrides: HashMap::new() }
    }

    pub fn with_tool(mut self, tool: impl Into<String>, probability: f64) -> Self {
        self.overrides.insert(tool.into(), probability.clamp(0.0, 1.0));
        self
    }

    /// Restricts failures to `tools`, at the current probability.
    pub fn only(mut self, tools: impl IntoIterator<Item = impl Into<String>>) -> Self {
        for tool in tools {
            self.overrides.insert(tool.into(), self.probability);
        }
        self.probability = 0.0;
        self
    }

    pub fn probability_for(&self, tool: &str) -> f64 {
        self.overrides.get(tool).copied().unwrap_or(self.probability)
    }

    fn stream_seed(&self, session_id: &str, sequence: u64) -> u64 {
        // FNV-1a over the session id, folded with the seed and sequence.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in session_id.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^ self.seed.rotate_left(17) ^ sequence.wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }
}

impl FaultInjector for SeededFaults {
    fn inject(&self, session_id: &str, sequence: u64, tool: &str) -> Option<String> {
        let p = self.probability_for(tool);
        if p <= 0.0 {
            return None;
        }
        let mut rng = StdRng::seed_from_u64(self.stream_seed(session_id, sequence));
        rng.random_bool(p).then(|| "injected failure".to_string())
    }
}
