//! Experiment results: per-run records, per-configuration aggregates and
//! seed-paired ratios.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: String,
    pub seed: u64,
    pub wall_ms: f64,
    pub dollars: f64,
    /// Exact dollar amount when the run was priced with rationals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dollars_exact: Option<String>,
    pub success: bool,
    #[serde(default)]
    pub turns: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub config: String,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_wall_ms: f64,
    pub median_wall_ms: f64,
    pub mean_dollars: f64,
    pub median_dollars: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<ConfigSummary>,
    pub ratios: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len().is_multiple_of(2) {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    }
}

impl ExperimentReport {
    pub fn new(scenario: impl Into<String>) -> Self {
        Self { scenario: scenario.into(), ..Default::default() }
    }

    pub fn push(&mut self, run: RunRecord) {
        self.runs.push(run);
    }

    /// Configuration names in first-seen order.
    pub fn configs(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for run in &self.runs {
            if !out.contains(&run.config) {
                out.push(run.config.clone());
            }
        }
        out
    }

    pub fn runs_for<'a>(&'a self, config: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.runs.iter().filter(move |r| r.config == config)
    }

    /// Recomputes the per-configuration summaries.
    pub fn summarize(&mut self) {
        self.summaries = self
            .configs()
            .into_iter()
            .map(|config| {
                let runs: Vec<&RunRecord> = self.runs_for(&config).collect();
                let walls: Vec<f64> = runs.iter().map(|r| r.wall_ms).collect();
                let dollars: Vec<f64> = runs.iter().map(|r| r.dollars).collect();
                let successes = runs.iter().filter(|r| r.success).count();
                ConfigSummary {
                    runs: runs.len(),
                    successes,
                    success_rate: if runs.is_empty() { 0.0 } else { successes as f64 / runs.len() as f64 },
                    mean_wall_ms: mean(&walls),
                    median_wall_ms: median(&walls),
                    mean_dollars: mean(&dollars),
                    median_dollars: median(&dollars),
                    config,
                }
            })
            .collect();
    }

    pub fn summary(&self, config: &str) -> Option<&ConfigSummary> {
        self.summaries.iter().find(|s| s.config == config)
    }

    /// Mean of per-seed `metric(numerator) / metric(denominator)`, over seeds
    /// present in both configurations. `None` without a common seed.
    pub fn paired_ratio(&self, numerator: &str, denominator: &str, metric: impl Fn(&RunRecord) -> f64) -> Option<f64> {
        let den: BTreeMap<u64, f64> = self.runs_for(denominator).map(|r| (r.seed, metric(r))).collect();
        let ratios: Vec<f64> = self
            .runs_for(numerator)
            .filter_map(|r| den.get(&r.seed).filter(|d| **d != 0.0).map(|d| metric(r) / d))
            .collect();
        (!ratios.is_empty()).then(|| mean(&ratios))
    }

    pub fn set_ratio(&mut self, name: impl Into<String>, value: f64) {
        self.ratios.insert(name.into(), value);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "scenario: {}", self.scenario).unwrap();
        writeln!(
            out,
            "{:<24} {:>5} {:>8} {:>12} {:>12} {:>12}",
            "config", "runs", "success", "mean_ms", "median_ms", "mean_$"
        )
        .unwrap();
        for s in &self.summaries {
            writeln!(
                out,
                "{:<24} {:>5} {:>8.3} {:>12.1} {:>12.1} {:>12.6}",
                s.config, s.runs, s.success_rate, s.mean_wall_ms, s.median_wall_ms, s.mean_dollars
            )
            .unwrap();
        }
        for (name, value) in &self.ratios {
            writeln!(out, "{name} = {value:.4}").unwrap();
        }
        for note in &self.notes {
            writeln!(out, "note: {note}").unwrap();
        }
        out
    }
}
