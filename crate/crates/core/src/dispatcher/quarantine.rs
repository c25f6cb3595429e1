//! Consecutive-failure tracking per tool.

use std::collections::HashMap;
use std::time::Duration;

use tokio::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuarantinePolicy {
    /// Consecutive failures that trigger quarantine.
    pub threshold: u32,
    pub cooldown: Duration,
}

impl Default for QuarantinePolicy {
    fn default() -> Self {
        Self { threshold: 3, cooldown: Duration::from_secs(60) }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Health {
    consecutive: u32,
    until: Option<Instant>,
}

/// Pure state machine; all time comes in through `now`.
#[derive(Debug, Clone, Default)]
pub struct FailureTracker {
    policy: QuarantinePolicy,
    tools: HashMap<String, Health>,
}

impl FailureTracker {
    pub fn new(policy: QuarantinePolicy) -> Self {
        Self { policy, tools: HashMap::new() }
    }

    pub fn policy(&self) -> QuarantinePolicy {
        self.policy
    }

    fn refresh(&mut self, tool: &str, now: Instant) -> &mut Health {
        let health = self.tools.entry(tool.to_string()).or_default();
        if health.until.is_some_and(|until| now >= until) {
            *health = Health::default();
        }
        health
    }

    pub fn is_quarantined(&mut self, tool: &str, now: Instant) -> bool {
        self.refresh(tool, now).until.is_some()
    }

    pub fn consecutive_failures(&mut self, tool: &str, now: Instant) -> u32 {
        self.refresh(tool, now).consecutive
    }

    /// Records an outcome. Returns the quarantine deadline when this
    /// failure crosses the threshold.
    pub fn record(&mut self, tool: &str, failed: bool, now: Instant) -> Option<Instant> {
        let policy = self.policy;
        let health = self.refresh(tool, now);
        if health.until.is_some() {
            return None;
        }
        if !failed {
            health.consecutive = 0;
            return None;
        }
        health.consecutive += 1;
        if health.consecutive >= policy.threshold {
            let until = now + policy.cooldown;
            health.until = Some(until);
            return Some(until);
        }
        None
    }
}
