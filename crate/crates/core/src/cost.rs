//! Token accounting and dollar estimates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Dollar rates per 1000 tokens for a planner backend.
#[derive(Debug, Clone, PartialEq)]
pub struct PricingRates<T> {
    pub prompt_per_1k: T,
    pub completion_per_1k: T,
}

impl<T: Scalar> PricingRates<T> {
    pub fn new(prompt_per_1k: T, completion_per_1k: T) -> Self {
        Self { prompt_per_1k, completion_per_1k }
    }

    /// GPT-4o list pricing: $0.005 / 1K prompt tokens, $0.015 / 1K completion tokens.
    pub fn gpt4o() -> Self {
        Self {
            prompt_per_1k: T::from_decimal("0.005").expect("literal"),
            completion_per_1k: T::from_decimal("0.015").expect("literal"),
        }
    }
}

/// Plain-float rates as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    pub prompt_per_1k: f64,
    pub completion_per_1k: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self { prompt_per_1k: 0.005, completion_per_1k: 0.015 }
    }
}

impl RateConfig {
    pub fn to_rates<T: Scalar>(&self) -> Option<PricingRates<T>> {
        Some(PricingRates {
            prompt_per_1k: crate::scalar::from_f64(self.prompt_per_1k)?,
            completion_per_1k: crate::scalar::from_f64(self.completion_per_1k)?,
        })
    }
}

/// Token usage of one planner backend call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Running token totals plus their dollar value.
///
/// The planner estimate is always
/// `Σ prompt/1000 × prompt_rate + Σ completion/1000 × completion_rate`;
/// tool spend is tracked separately against each tool's own rate.
#[derive(Debug, Clone, PartialEq)]
pub struct CostLedger<T = f64> {
    calls: Vec<CallUsage>,
    prompt_tokens: u64,
    completion_tokens: u64,
    planner_dollars: T,
    tool_tokens: BTreeMap<String, u64>,
    tool_dollars: T,
}

impl<T: Scalar> Default for CostLedger<T> {
    fn default() -> Self {
        Self {
            calls: Vec::new(),
            prompt_tokens: 0,
            completion_tokens: 0,
            planner_dollars: T::zero(),
            tool_tokens: BTreeMap::new(),
            tool_dollars: T::zero(),
        }
    }
}

fn per_thousand<T: Scalar>(tokens: u64, rate: &T) -> T {
    T::from_count(tokens) * rate.clone() / T::from_count(1000)
}

impl<T: Scalar> CostLedger<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one planner backend call.
    pub fn record_tokens(&mut self, prompt_tokens: u64, completion_tokens: u64, rates: &PricingRates<T>) {
        self.calls.push(CallUsage { prompt_tokens, completion_tokens });
        self.prompt_tokens += prompt_tokens;
        self.completion_tokens += completion_tokens;
        let delta = per_thousand(prompt_tokens, &rates.prompt_per_1k)
            + per_thousand(completion_tokens, &rates.completion_per_1k);
        self.planner_dollars = self.planner_dollars.clone() + delta;
    }

    /// Records tokens consumed by a tool call. `rate_per_1k` is the tool's
    /// declared cost, if any.
    pub fn record_tool_tokens(&mut self, tool: &str, tokens: u64, rate_per_1k: Option<&T>) {
        *self.tool_tokens.entry(tool.to_string()).or_default() += tokens;
        if let Some(rate) = rate_per_1k {
            self.tool_dollars = self.tool_dollars.clone() + per_thousand(tokens, rate);
        }
    }

    pub fn calls(&self) -> &[CallUsage] {
        &self.calls
    }

    pub fn prompt_tokens(&self) -> u64 {
        self.prompt_tokens
    }

    pub fn completion_tokens(&self) -> u64 {
        self.completion_tokens
    }

    pub fn tool_tokens(&self) -> &BTreeMap<String, u64> {
        &self.tool_tokens
    }

    /// Planner-side dollar estimate.
    pub fn dollar_estimate(&self) -> T {
        self.planner_dollars.clone()
    }

    pub fn tool_dollars(&self) -> T {
        self.tool_dollars.clone()
    }

    pub fn total_dollars(&self) -> T {
        self.planner_dollars.clone() + self.tool_dollars.clone()
    }

    pub fn summary(&self) -> CostSummary {
        CostSummary {
            backend_calls: self.calls.len(),
            prompt_tokens: self.prompt_tokens,
            completion_tokens: self.completion_tokens,
            tool_tokens: self.tool_tokens.clone(),
            planner_dollars: self.planner_dollars.to_f64_lossy(),
            tool_dollars: self.tool_dollars.to_f64_lossy(),
            total_dollars: self.total_dollars().to_f64_lossy(),
        }
    }
}

/// Serializable snapshot of a ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub backend_calls: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub tool_tokens: BTreeMap<String, u64>,
    pub planner_dollars: f64,
    pub tool_dollars: f64,
    pub total_dollars: f64,
}

/// Token estimate used when a backend reports no usage: one token per four
/// characters, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}
