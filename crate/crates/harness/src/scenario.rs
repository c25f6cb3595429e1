//! Scenario files: a JSON document naming a workload and the checks its
//! report must satisfy.
//!
//! ```json
//! {
//!   "name": "fan-out",
//!   "kind": "scripted",
//!   "task": "Look up two things",
//!   "tools": [{"name": "Slow", "latency": {"kind": "fixed", "ms": 200}, "max_parallel": 2}],
//!   "steps": [
//!     {"response": "Thought: both\nAction: Slow(q=\"a\") && Slow(q=\"b\")"},
//!     {"expect": ["Slow ok"], "response": "Final Answer: done"}
//!   ],
//!   "checks": [{"check": "mean_wall_ms", "config": "scripted", "max": 250}]
//! }
//! ```

use std::path::Path;
use std::sync::Arc;

use reactor_core::backends::{Script, ScriptStep, ScriptedBackend};
use reactor_core::{DispatcherConfig, SessionConfig, SessionState, SessionStatus};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::time::Instant;

use crate::experiments::{
    run_cost_experiment, run_parallelism_experiment, run_robustness_experiment, CostConfig, ParallelismConfig, Sandbox,
    TokenTrace,
};
use crate::golden::{run_golden_trace, GoldenOptions};
use crate::report::{ExperimentReport, RunRecord};
use crate::synthetic::{self, Latency, SyntheticToolSpec};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Workload {
    /// Scripted planner turns against synthetic tools, once per seed.
    Scripted {
        task: String,
        tools: Vec<SyntheticToolSpec>,
        steps: Vec<ScriptStep>,
        #[serde(default)]
        sequential: bool,
        #[serde(default = "default_seeds")]
        seeds: Vec<u64>,
        #[serde(default)]
        max_turns: Option<u32>,
    },
    Parallelism {
        n_tasks: usize,
        latency: Latency,
        capacity: usize,
        #[serde(default = "default_seeds")]
        seeds: Vec<u64>,
    },
    Robustness {
        failure_probability: f64,
        runs: usize,
        #[serde(default)]
        seed: u64,
    },
    /// The document-query session.
    Golden {
        #[serde(default)]
        pdf_max_parallel: Option<usize>,
        #[serde(default)]
        missing_pages: Vec<usize>,
    },
    /// Prices a token trace under each configuration; the golden session's
    /// trace when none is given.
    Cost {
        configs: Vec<CostConfig>,
        #[serde(default)]
        trace: Option<TokenTrace>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Check {
    SuccessRate { config: String, min: Option<f64>, max: Option<f64> },
    MeanWallMs { config: String, min: Option<f64>, max: Option<f64> },
    Ratio { name: String, min: Option<f64>, max: Option<f64> },
    /// Every run of `config` has an answer containing `text`.
    AnswerContains { config: String, text: String },
    /// `lower` has a strictly smaller success rate than `higher`.
    FewerSuccesses { lower: String, higher: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(flatten)]
    pub workload: Workload,
    #[serde(default)]
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: String,
    pub passed: bool,
    pub observed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
    pub report: ExperimentReport,
    /// Event transcripts of scripted and golden runs.
    #[serde(default)]
    pub transcripts: Vec<Vec<String>>,
}

impl ScenarioResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = self.report.to_table();
        for c in &self.checks {
            out.push_str(&format!("{} {} (observed {})\n", if c.passed { "PASS" } else { "FAIL" }, c.check, c.observed));
        }
        out.push_str(if self.passed { "scenario passed\n" } else { "scenario failed\n" });
        out
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(m.to_string()));
        match &self.workload {
            Workload::Scripted { steps, seeds, .. } if steps.is_empty() || seeds.is_empty() => bad("scripted scenarios need steps and seeds"),
            Workload::Parallelism { n_tasks: 0, .. } => bad("n_tasks must be at least 1"),
            Workload::Parallelism { seeds, .. } if seeds.is_empty() => bad("parallelism scenarios need seeds"),
            Workload::Robustness { failure_probability, .. } if !(0.0..=1.0).contains(failure_probability) => {
                bad("failure_probability must lie in [0, 1]")
            }
            Workload::Cost { configs, .. } if configs.is_empty() => bad("cost scenarios need at least one configuration"),
            _ => Ok(()),
        }
    }

    /// Returns the workload with its seeds replaced by `seed` (and, for
    /// seed lists, the following seeds).
    pub fn with_seed(&self, seed: u64) -> Scenario {
        let mut out = self.clone();
        match &mut out.workload {
            Workload::Scripted { seeds, .. } | Workload::Parallelism { seeds, .. } => {
                *seeds = (seed..seed + seeds.len() as u64).collect();
            }
            Workload::Robustness { seed: s, .. } => *s = seed,
            Workload::Golden { .. } | Workload::Cost { .. } => {}
        }
        out
    }
}

pub const SCRIPTED: &str = "scripted";
pub const GOLDEN: &str = "golden";

async fn run_scripted(
    task: &str,
    tools: &[SyntheticToolSpec],
    steps: &[ScriptStep],
    sequential: bool,
    seed: u64,
    max_turns: Option<u32>,
) -> Result<(RunRecord, Vec<String>), ScenarioError> {
    let sandbox = Sandbox::default();
    let faults = synthetic::install(tools, seed, &sandbox.registry, &sandbox.host).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let backend = Arc::new(ScriptedBackend::new(Script::new(steps.to_vec())));
    let orchestrator = sandbox.orchestrator(DispatcherConfig { sequential, ..Default::default() }, Some(Arc::new(faults)), backend);
    let mut config = SessionConfig::default();
    if let Some(n) = max_turns {
        config.max_turns = n;
    }
    let id = format!("scenario-{seed}");
    let mut session = SessionState::new(id.clone(), task, Vec::new(), config);
    let started = Instant::now();
    let outcome = orchestrator.run_session(&mut session).await;
    let wall = started.elapsed();
    let transcript = crate::golden::transcript_lines(&sandbox.events.history(&id, 0).unwrap_or_default());
    let record = RunRecord {
        config: SCRIPTED.into(),
        seed,
        wall_ms: wall.as_secs_f64() * 1000.0,
        dollars: outcome.cost.total_dollars,
        dollars_exact: None,
        success: outcome.status == SessionStatus::Done,
        turns: outcome.turns,
        answer: outcome.answer,
    };
    Ok((record, transcript))
}

/// Runs the scenario on the current runtime. Under a paused clock the result
/// is a pure function of the scenario.
pub async fn run_scenario(scenario: &Scenario) -> Result<ScenarioResult, ScenarioError> {
    scenario.validate()?;
    let mut transcripts = Vec::new();
    let report = match &scenario.workload {
        Workload::Scripted { task, tools, steps, sequential, seeds, max_turns } => {
            let mut report = ExperimentReport::new(scenario.name.clone());
            for &seed in seeds {
                let (record, transcript) = run_scripted(task, tools, steps, *sequential, seed, *max_turns).await?;
                report.push(record);
                transcripts.push(transcript);
            }
            report.summarize();
            report
        }
        Workload::Parallelism { n_tasks, latency, capacity, seeds } => {
            let config = ParallelismConfig { n_tasks: *n_tasks, latency: *latency, capacity: *capacity, seeds: seeds.clone() };
            run_parallelism_experiment(&config).await
        }
        Workload::Robustness { failure_probability, runs, seed } => run_robustness_experiment(*failure_probability, *runs, *seed).await,
        Workload::Golden { pdf_max_parallel, missing_pages } => {
            let mut options = GoldenOptions { missing_pages: missing_pages.iter().copied().collect(), ..Default::default() };
            if let Some(n) = pdf_max_parallel {
                options.pdf_max_parallel = *n;
            }
            let golden = run_golden_trace(options).await;
            let mut report = ExperimentReport::new(scenario.name.clone());
            report.push(RunRecord {
                config: GOLDEN.into(),
                seed: 0,
                wall_ms: golden.elapsed_ms as f64,
                dollars: golden.outcome.cost.total_dollars,
                dollars_exact: None,
                success: golden.passed,
                turns: golden.outcome.turns,
                answer: golden.outcome.answer.clone(),
            });
            report.notes.extend(golden.failures.iter().cloned());
            report.summarize();
            transcripts.push(golden.transcript);
            report
        }
        Workload::Cost { configs, trace } => {
            let trace = match trace {
                Some(t) => t.clone(),
                None => run_golden_trace(GoldenOptions::default()).await.token_trace,
            };
            let mut report = run_cost_experiment(&trace, configs);
            report.scenario = scenario.name.clone();
            report
        }
    };
    let checks: Vec<CheckResult> = scenario.checks.iter().map(|c| evaluate(c, &report)).collect();
    Ok(ScenarioResult {
        scenario: scenario.name.clone(),
        passed: checks.iter().all(|c| c.passed),
        checks,
        report,
        transcripts,
    })
}

/// Runs the scenario on a fresh single-threaded runtime with a paused
/// clock, so wall times are virtual and reruns are byte-identical.
pub fn run_scenario_blocking(scenario: &Scenario) -> Result<ScenarioResult, ScenarioError> {
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .start_paused(true)
        .build()
        .map_err(|e| ScenarioError::Invalid(format!("runtime: {e}")))?;
    runtime.block_on(run_scenario(scenario))
}

fn in_range(value: f64, min: Option<f64>, max: Option<f64>) -> bool {
    min.is_none_or(|m| value >= m) && max.is_none_or(|m| value <= m)
}

fn bounds(min: Option<f64>, max: Option<f64>) -> String {
    match (min, max) {
        (Some(a), Some(b)) => format!("in [{a}, {b}]"),
        (Some(a), None) => format!(">= {a}"),
        (None, Some(b)) => format!("<= {b}"),
        (None, None) => "present".into(),
    }
}

fn evaluate(check: &Check, report: &ExperimentReport) -> CheckResult {
    let missing = |what: &str| CheckResult { check: what.to_string(), passed: false, observed: "missing".into() };
    match check {
        Check::SuccessRate { config, min, max } => {
            let label = format!("success rate of {config} {}", bounds(*min, *max));
            match report.summary(config) {
                Some(s) => CheckResult { passed: in_range(s.success_rate, *min, *max), observed: format!("{:.4}", s.success_rate), check: label },
                None => missing(&label),
            }
        }
        Check::MeanWallMs { config, min, max } => {
            let label = format!("mean wall ms of {config} {}", bounds(*min, *max));
            match report.summary(config) {
                Some(s) => CheckResult { passed: in_range(s.mean_wall_ms, *min, *max), observed: format!("{:.1}", s.mean_wall_ms), check: label },
                None => missing(&label),
            }
        }
        Check::Ratio { name, min, max } => {
            let label = format!("{name} {}", bounds(*min, *max));
            match report.ratios.get(name) {
                Some(v) => CheckResult { passed: in_range(*v, *min, *max), observed: format!("{v:.4}"), check: label },
                None => missing(&label),
            }
        }
        Check::AnswerContains { config, text } => {
            let runs: Vec<_> = report.runs_for(config).collect();
            let hits = runs.iter().filter(|r| r.answer.as_deref().is_some_and(|a| a.contains(text.as_str()))).count();
            CheckResult {
                check: format!("answers of {config} contain {text:?}"),
                passed: !runs.is_empty() && hits == runs.len(),
                observed: format!("{hits}/{}", runs.len()),
            }
        }
        Check::FewerSuccesses { lower, higher } => {
            let label = format!("{lower} succeeds less often than {higher}");
            match (report.summary(lower), report.summary(higher)) {
                (Some(l), Some(h)) => CheckResult {
                    passed: l.successes < h.successes,
                    observed: format!("{} vs {}", l.successes, h.successes),
                    check: label,
                },
                _ => missing(&label),
            }
        }
    }
}
