//! ReAct-style tool orchestration: a typed tool registry, a planner loop,
//! a capacity-aware parallel dispatcher and streamed observability.

pub mod action;
pub mod backends;
pub mod cost;
pub mod dispatcher;
pub mod observability;
pub mod planner;
pub mod registry;
pub mod scalar;

pub use action::{Action, ArgValue, Argument, CallMode, GroupId};
pub use backends::{BackendError, BackendRequest, Completion, HttpBackend, PlannerBackend, Script, ScriptStep, ScriptedBackend};
pub use cost::{estimate_tokens, CostLedger, CostSummary, PricingRates, RateConfig};
pub use dispatcher::{Attachment, DispatchRequest, DispatchResult, Dispatcher, DispatcherConfig, Outcome, ToolHost};
pub use observability::{Event, EventHub, EventType};
pub use planner::{Orchestrator, SessionConfig, SessionOutcome, SessionState, SessionStatus};
pub use registry::{Registry, RegistrySnapshot, ToolDescriptor};
pub use scalar::Scalar;

pub type CostLedgerF64 = CostLedger<f64>;
pub type CostLedgerF32 = CostLedger<f32>;
pub type ExactCostLedger = CostLedger<num_rational::Ratio<i64>>;
pub type PricingRatesF64 = PricingRates<f64>;
pub type ExactPricingRates = PricingRates<num_rational::Ratio<i64>>;
