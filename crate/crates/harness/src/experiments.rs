//! Experiment runners: parallel speedup, robustness under injected failures
//! and cost accounting.
//!
//! Every run builds its own registry, host and event hub so quarantine state
//! never leaks between runs. Wall times come from the tokio clock, so under a
//! paused runtime they are exact virtual times.

use std::collections::BTreeMap;
use std::sync::Arc;

use futures::future::join_all;
use num_rational::Ratio;
use reactor_core::backends::{PlannerBackend, Script, ScriptStep, ScriptedBackend};
use reactor_core::cost::CallUsage;
use reactor_core::dispatcher::{FaultInjector, ToolHost};
use reactor_core::planner::EntryKind;
use reactor_core::scalar::{from_f64, Scalar};
use reactor_core::{
    CostLedger, Dispatcher, DispatcherConfig, EventHub, Orchestrator, PricingRates, RateConfig, Registry, SessionConfig,
    SessionOutcome, SessionState, SessionStatus,
};
use serde::{Deserialize, Serialize};
use tokio::time::Instant;

use crate::policy::{expected_fact, fact_task, PolicyBackend, FACT_TEMPLATE};
use crate::report::{ExperimentReport, RunRecord};
use crate::synthetic::{self, Latency, SyntheticToolSpec};

/// An isolated engine for one run.
pub struct Sandbox {
    pub events: Arc<EventHub>,
    pub registry: Arc<Registry>,
    pub host: Arc<ToolHost>,
}

impl Default for Sandbox {
    fn default() -> Self {
        let events = Arc::new(EventHub::new());
        Self { registry: Arc::new(Registry::with_events(events.clone())), host: Arc::new(ToolHost::new()), events }
    }
}

impl Sandbox {
    pub fn orchestrator(
        &self,
        config: DispatcherConfig,
        faults: Option<Arc<dyn FaultInjector>>,
        backend: Arc<dyn PlannerBackend>,
    ) -> Orchestrator {
        let dispatcher = Dispatcher::new(self.registry.clone(), self.host.clone(), config).with_events(self.events.clone());
        dispatcher.set_faults(faults);
        Orchestrator::new(Arc::new(dispatcher), self.events.clone(), backend)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelismConfig {
    pub n_tasks: usize,
    pub latency: Latency,
    /// `max_parallel` of the simulated tool.
    pub capacity: usize,
    pub seeds: Vec<u64>,
}

impl ParallelismConfig {
    /// `ceil(n / c) × L` for fixed latencies.
    pub fn queueing_law_ms(&self) -> Option<f64> {
        match self.latency {
            Latency::Fixed { ms } => Some(self.n_tasks.div_ceil(self.capacity.max(1)) as f64 * ms as f64),
            Latency::Uniform { .. } => None,
        }
    }
}

pub const PARALLEL: &str = "parallel";
pub const SEQUENTIAL: &str = "sequential";

fn fan_out_script(n: usize) -> Script {
    let calls: Vec<String> = (1..=n).map(|i| format!("Slow(q=\"{i}\")")).collect();
    Script::new(vec![
        ScriptStep::new(format!("Thought: These lookups are independent.\nAction: {}", calls.join(" && "))),
        ScriptStep::new("Thought: All lookups returned.\nFinal Answer: done"),
    ])
}

async fn parallelism_run(config: &ParallelismConfig, seed: u64, sequential: bool) -> RunRecord {
    let sandbox = Sandbox::default();
    let spec = SyntheticToolSpec::new("Slow", config.latency).with_max_parallel(config.capacity.max(1));
    synthetic::install(&[spec], seed, &sandbox.registry, &sandbox.host).expect("fresh registry");
    let dispatch = DispatcherConfig { sequential, ..Default::default() };
    let orchestrator = sandbox.orchestrator(dispatch, None, Arc::new(ScriptedBackend::new(fan_out_script(config.n_tasks))));
    let label = if sequential { SEQUENTIAL } else { PARALLEL };
    let mut session = SessionState::new(format!("{label}-{seed}"), "Run the independent lookups", Vec::new(), SessionConfig::default());
    let started = Instant::now();
    let outcome = orchestrator.run_session(&mut session).await;
    let wall = started.elapsed();
    let all_ok = session.results.len() == config.n_tasks && session.results.iter().all(|r| r.outcome.is_ok());
    RunRecord {
        config: label.to_string(),
        seed,
        wall_ms: wall.as_secs_f64() * 1000.0,
        dollars: outcome.cost.total_dollars,
        dollars_exact: None,
        success: outcome.status == SessionStatus::Done && all_ok,
        turns: outcome.turns,
        answer: outcome.answer.clone(),
    }
}

/// Runs the same fan-out workload with parallel and forced-sequential
/// dispatch for every seed. Runs execute concurrently, each in its own
/// sandbox.
pub async fn run_parallelism_experiment(config: &ParallelismConfig) -> ExperimentReport {
    let runs = join_all(
        config
            .seeds
            .iter()
            .flat_map(|&seed| [false, true].map(move |sequential| (seed, sequential)))
            .map(|(seed, sequential)| parallelism_run(config, seed, sequential)),
    )
    .await;
    let mut report = ExperimentReport::new(format!("parallelism n={} c={}", config.n_tasks, config.capacity));
    report.runs = runs;
    report.summarize();
    if let Some(ratio) = report.paired_ratio(SEQUENTIAL, PARALLEL, |r| r.wall_ms) {
        report.set_ratio("sequential/parallel wall", ratio);
    }
    if let (Some(law), Some(par)) = (config.queueing_law_ms(), report.summary(PARALLEL)) {
        report.set_ratio("parallel wall/queueing law", par.mean_wall_ms / law);
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    pub label: String,
    pub failure_probability: f64,
    pub replan: bool,
    /// Registers the mirror tool the policy can fall back to.
    pub fallback: bool,
    pub runs: usize,
    pub seed: u64,
    pub facts: Vec<String>,
    pub latency_ms: u64,
    pub max_turns: u32,
}

impl RobustnessConfig {
    pub fn new(label: impl Into<String>, failure_probability: f64, replan: bool) -> Self {
        Self {
            label: label.into(),
            failure_probability,
            replan,
            fallback: true,
            runs: 200,
            seed: 7,
            facts: ["alpha", "beta", "gamma"].map(String::from).to_vec(),
            latency_ms: 100,
            max_turns: 10,
        }
    }
}

pub const PRIMARY_TOOL: &str = "Lookup";
pub const FALLBACK_TOOL: &str = "Mirror";

/// One robustness run with the details needed to audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRun {
    pub record: RunRecord,
    pub outcome: SessionOutcome,
    pub error_entries: usize,
}

async fn robustness_run(config: &RobustnessConfig, index: usize) -> RobustnessRun {
    let sandbox = Sandbox::default();
    let mut specs = vec![SyntheticToolSpec::new(PRIMARY_TOOL, Latency::fixed(config.latency_ms)).with_response(FACT_TEMPLATE).with_max_parallel(4)];
    if config.fallback {
        specs.push(SyntheticToolSpec::new(FALLBACK_TOOL, Latency::fixed(config.latency_ms)).with_response(FACT_TEMPLATE).with_max_parallel(4));
    }
    let specs: Vec<_> = specs.into_iter().map(|s| s.with_failure_probability(config.failure_probability)).collect();
    let faults = synthetic::install(&specs, config.seed, &sandbox.registry, &sandbox.host).expect("fresh registry");
    let backend = PolicyBackend::new([PRIMARY_TOOL, FALLBACK_TOOL], config.replan);
    let orchestrator = sandbox.orchestrator(DispatcherConfig::default(), Some(Arc::new(faults)), Arc::new(backend));

    let facts: Vec<&str> = config.facts.iter().map(String::as_str).collect();
    let session_config = SessionConfig { max_turns: config.max_turns, ..Default::default() };
    let mut session = SessionState::new(format!("robustness-{index}"), fact_task(&facts), Vec::new(), session_config);
    let started = Instant::now();
    let outcome = orchestrator.run_session(&mut session).await;
    let wall = started.elapsed();

    let answer = outcome.answer.clone().unwrap_or_default();
    let complete = facts.iter().all(|f| answer.contains(&expected_fact(f)));
    let error_entries = session.scratchpad.entries().iter().filter(|e| e.kind == EntryKind::Error).count();
    let record = RunRecord {
        config: config.label.clone(),
        seed: index as u64,
        wall_ms: wall.as_secs_f64() * 1000.0,
        dollars: outcome.cost.total_dollars,
        dollars_exact: None,
        success: outcome.status == SessionStatus::Done && complete,
        turns: outcome.turns,
        answer: outcome.answer.clone(),
    };
    RobustnessRun { record, outcome, error_entries }
}

/// Runs `config.runs` sessions, one after another. Run `i` uses session id
/// `robustness-i`, so configurations with the same seed see the same fault
/// draws per dispatch sequence.
pub async fn run_robustness_config(config: &RobustnessConfig) -> Vec<RobustnessRun> {
    let mut out = Vec::with_capacity(config.runs);
    for i in 0..config.runs {
        out.push(robustness_run(config, i).await);
    }
    out
}

pub const BASELINE: &str = "baseline p=0";
pub const REPLAN: &str = "replan";
pub const NO_REPLAN: &str = "no replan";

/// Compares replanning and no-replanning at `failure_probability` against a
/// failure-free baseline over the same seeds.
pub async fn run_robustness_experiment(failure_probability: f64, runs: usize, seed: u64) -> ExperimentReport {
    let configs = [
        RobustnessConfig { runs, seed, ..RobustnessConfig::new(BASELINE, 0.0, true) },
        RobustnessConfig { runs, seed, ..RobustnessConfig::new(REPLAN, failure_probability, true) },
        RobustnessConfig { runs, seed, ..RobustnessConfig::new(NO_REPLAN, failure_probability, false) },
    ];
    let mut report = ExperimentReport::new(format!("robustness p={failure_probability}"));
    for config in &configs {
        report.runs.extend(run_robustness_config(config).await.into_iter().map(|r| r.record));
    }
    report.summarize();
    let rate = |name: &str| report.summary(name).map(|s| s.success_rate).unwrap_or(0.0);
    let (base, replan, no_replan) = (rate(BASELINE), rate(REPLAN), rate(NO_REPLAN));
    if base > 0.0 {
        report.set_ratio("replan completion/baseline", replan / base);
        report.set_ratio("no-replan completion/baseline", no_replan / base);
    }
    if let Some(overhead) = report.paired_ratio(REPLAN, BASELINE, |r| r.wall_ms) {
        report.set_ratio("replan wall/baseline wall", overhead);
    }
    let mean = |name: &str| report.summary(name).map(|s| s.mean_wall_ms).unwrap_or(0.0);
    let delta = mean(REPLAN) - mean(BASELINE);
    report.notes.push(format!("mean latency overhead with replanning: {delta:.1} ms"));
    report
}

/// Token counts of one workload, independent of any prices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenTrace {
    pub planner: Vec<CallUsage>,
    /// `(tool, tokens)` per tool call.
    pub tools: Vec<(String, u64)>,
}

impl TokenTrace {
    pub fn from_session(session: &SessionState) -> Self {
        Self {
            planner: session.cost.calls().to_vec(),
            tools: session.results.iter().map(|r| (r.tool.clone(), r.tokens)).collect(),
        }
    }
}

/// Prices for a cost comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub name: String,
    pub planner: RateConfig,
    /// Per-tool dollars per 1000 tokens.
    #[serde(default)]
    pub tool_rates: BTreeMap<String, f64>,
    /// Rate for tools without an entry; unpriced when absent.
    #[serde(default)]
    pub default_tool_rate: Option<f64>,
}

impl CostConfig {
    /// Planner and every tool call at the expensive rates.
    pub fn uniform_expensive() -> Self {
        Self {
            name: "uniform expensive".into(),
            planner: RateConfig { prompt_per_1k: 0.005, completion_per_1k: 0.015 },
            tool_rates: BTreeMap::new(),
            default_tool_rate: Some(0.015),
        }
    }

    /// A cheap planner; only the summarizer is billed at the expensive rate.
    pub fn split() -> Self {
        Self {
            name: "cheap planner + priced summarizer".into(),
            planner: RateConfig { prompt_per_1k: 0.0005, completion_per_1k: 0.0015 },
            tool_rates: BTreeMap::from([("Summarizer".to_string(), 0.015)]),
            default_tool_rate: None,
        }
    }

    fn tool_rate(&self, tool: &str) -> Option<f64> {
        self.tool_rates.get(tool).copied().or(self.default_tool_rate)
    }
}

/// Prices a trace in any scalar domain.
pub fn price_trace<T: Scalar>(trace: &TokenTrace, config: &CostConfig) -> Option<CostLedger<T>> {
    let rates: PricingRates<T> = config.planner.to_rates()?;
    let mut ledger = CostLedger::new();
    for call in &trace.planner {
        ledger.record_tokens(call.prompt_tokens, call.completion_tokens, &rates);
    }
    for (tool, tokens) in &trace.tools {
        let rate = match config.tool_rate(tool) {
            Some(r) => Some(from_f64::<T>(r)?),
            None => None,
        };
        ledger.record_tool_tokens(tool, *tokens, rate.as_ref());
    }
    Some(ledger)
}

/// Prices one trace under each configuration with exact rationals. Ratios
/// are relative to the first configuration.
pub fn run_cost_experiment(trace: &TokenTrace, configs: &[CostConfig]) -> ExperimentReport {
    let mut report = ExperimentReport::new("cost");
    let mut totals = Vec::new();
    for config in configs {
        let ledger = price_trace::<Ratio<i64>>(trace, config).expect("rates representable as decimals");
        let total = ledger.total_dollars();
        report.push(RunRecord {
            config: config.name.clone(),
            seed: 0,
            wall_ms: 0.0,
            dollars: total.to_f64_lossy(),
            dollars_exact: Some(total.to_string()),
            success: true,
            turns: trace.planner.len() as u32,
            answer: None,
        });
        totals.push(total);
    }
    report.summarize();
    if let Some(first) = totals.first().filter(|t| **t != Ratio::from_integer(0)) {
        for (config, total) in configs.iter().zip(&totals).skip(1) {
            report.set_ratio(format!("{}/{}", config.name, configs[0].name), (total / first).to_f64_lossy());
        }
    }
    report
}
