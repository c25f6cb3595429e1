use std::fmt::Write;

use super::{RegistrySnapshot, ToolView};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostTier {
    Low,
    Medium,
    High,
}

impl CostTier {
    fn label(self) -> &'static str {
        match self {
            CostTier::Low => "low",
            CostTier::Medium => "medium",
            CostTier::High => "high",
        }
    }
}

/// Relative cost tier for each tool, by rank tercile.
///
/// Tiers are assigned over the distinct cost values. Returns `None` for every
/// tool unless at least one has cost metadata and there are two or more
/// distinct costs to compare; tools without a declared cost rank as free.
pub fn cost_tiers(tools: &[&ToolView]) -> Vec<Option<CostTier>> {
    let any_cost = tools.iter().any(|t| t.descriptor.cost_per_1k_tokens.is_some());
    if !any_cost || tools.len() < 2 {
        return vec![None; tools.len()];
    }
    let costs: Vec<f64> = tools.iter().map(|t| t.descriptor.cost_per_1k_tokens.unwrap_or(0.0)).collect();
    let mut distinct = costs.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return vec![None; tools.len()];
    }
    let span = (distinct.len() - 1) as f64;
    costs
        .iter()
        .map(|cost| {
            let rank = distinct.iter().position(|c| c == cost).expect("present") as f64;
            let position = rank / span;
            Some(if position < 1.0 / 3.0 {
                CostTier::Low
            } else if position < 2.0 / 3.0 {
                CostTier::Medium
            } else {
                CostTier::High
            })
        })
        .collect()
}

/// Renders the tool list included in every planner prompt.
pub fn render_tool_prompt(snapshot: &RegistrySnapshot) -> String {
    let offered: Vec<&ToolView> = snapshot.offered().collect();
    if offered.is_empty() {
        return "You have no tools available. Answer directly.".to_string();
    }
    let tiers = cost_tiers(&offered);
    let mut out = String::from("You have the following tools:\n");
    for (tool, tier) in offered.iter().zip(tiers) {
        let d = &tool.descriptor;
        write!(out, "[{}: {}; usage: {}{}", d.name, d.description.trim(), d.name, d.signature.usage()).unwrap();
        if d.max_parallel > 1 {
            write!(out, "; up to {} concurrent calls", d.max_parallel).unwrap();
        }
        if let Some(tier) = tier {
            write!(out, "; cost: {}", tier.label()).unwrap();
        }
        out.push_str("]\n");
    }
    out.pop();
    out
}
