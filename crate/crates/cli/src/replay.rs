//! Deterministic replay of an action trace through the context manager, and
//! the report assembled from the structured log afterwards.

use std::collections::BTreeMap;

use ctxcm_core::cascade::{Cascade, ContextId};
use ctxcm_core::identify::ActionEvent;
use ctxcm_core::manager::{ContextManager, LogRecord, ManagerConfig};
use ctxcm_core::model::Ontology;
use serde::{Deserialize, Serialize};

/// How replay answers confirmation requests without a user present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum ConfirmPolicy {
    /// Accept the top-ranked candidate.
    #[default]
    First,
    /// Accept the runner-up.
    Second,
    /// Let the request expire after one replay step; the current context is
    /// kept.
    Timeout,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayOptions {
    pub policy: ConfirmPolicy,
    /// End all live activities (cascade mode) once the trace is exhausted,
    /// closing their behaviour records.
    pub finish: bool,
    pub config: ManagerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationEntry {
    pub tick: u64,
    pub agent: String,
    pub class: String,
    /// "identified" for a direct decision, "confirmed" for an answered
    /// confirmation.
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionEntry {
    pub tick: u64,
    pub agent: String,
    pub text: String,
}

/// Replay outcome counts, all derived from the structured log so they cannot
/// drift from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub events_processed: u64,
    pub identifications: Vec<IdentificationEntry>,
    pub focus_switches: u64,
    pub drift_events: u64,
    pub publishes: u64,
    pub suggestions: Vec<SuggestionEntry>,
    pub confirmations_requested: u64,
    pub confirmations_answered: u64,
    pub final_cascade: Vec<String>,
}

pub struct ReplayOutcome {
    pub manager: ContextManager,
    pub report: ReplayReport,
}

/// Replays `events` in order, resolving confirmation requests per policy.
/// Identical inputs produce identical reports and logs.
pub fn replay(ontology: Ontology, events: Vec<ActionEvent>, options: ReplayOptions) -> ReplayOutcome {
    let mut manager = ContextManager::new(ontology, options.config.clone());
    replay_into(&mut manager, events, &options);
    let report = build_report(&manager);
    ReplayOutcome { manager, report }
}

/// Replay loop against an existing manager (so callers can pre-attach sinks
/// or log writers).
pub fn replay_into(manager: &mut ContextManager, events: Vec<ActionEvent>, options: &ReplayOptions) {
    let mut roots = Vec::new();
    for event in events {
        let agent = event.agent.clone();
        if options.policy == ConfirmPolicy::Timeout
            && manager.confirmation_expired(&agent, event.timestamp)
        {
            manager.expire_confirmation(&agent);
        }
        manager.handle_event(event);
        if options.policy != ConfirmPolicy::Timeout {
            if let Some(pending) = manager.pending_confirmation(&agent).cloned() {
                let choice = match options.policy {
                    ConfirmPolicy::First => &pending.candidates[0].0,
                    _ => &pending.candidates[1].0,
                };
                manager
                    .reply_confirmation(&agent, pending.request_id, &choice.clone())
                    .expect("policy choice is always a candidate");
            }
        }
    }
    if options.finish {
        roots.extend(
            manager
                .engine()
                .cascade()
                .activities()
                .filter(|a| a.is_live() && a.parent.is_none())
                .map(|a| a.id),
        );
        for root in roots {
            let _ = manager.end_activity(root, ctxcm_core::lifecycle::EndMode::Cascade);
        }
    }
}

/// Derives every report count from the structured log records.
pub fn build_report(manager: &ContextManager) -> ReplayReport {
    let log = manager.log();
    let stage = |n: u8| log.iter().filter(move |r| r.stage == n);

    let identifications = log
        .iter()
        .filter_map(|r| {
            if r.stage != 2 {
                return None;
            }
            let mode = if r.detail.starts_with("identified ") {
                "identified"
            } else if r.detail.starts_with("confirmed ") {
                "confirmed"
            } else {
                return None;
            };
            let class = r.detail.split_whitespace().nth(1)?.to_string();
            Some(IdentificationEntry {
                tick: r.ts,
                agent: r.agent.clone(),
                class,
                mode: mode.to_string(),
            })
        })
        .collect();

    let suggestions = stage(5)
        .map(|r| SuggestionEntry {
            tick: r.ts,
            agent: r.agent.clone(),
            text: r.data["text"].as_str().unwrap_or_default().to_string(),
        })
        .collect();

    ReplayReport {
        events_processed: stage(6).count() as u64,
        identifications,
        focus_switches: log
            .iter()
            .filter(|r| r.stage == 0 && r.detail.starts_with("focus "))
            .count() as u64,
        drift_events: stage(7).count() as u64,
        publishes: stage(3).count() as u64,
        suggestions,
        confirmations_requested: log
            .iter()
            .filter(|r| r.detail.starts_with("confirmation requested"))
            .count() as u64,
        confirmations_answered: log
            .iter()
            .filter(|r| r.stage == 2 && r.detail.starts_with("confirmed "))
            .count() as u64,
        final_cascade: render_cascade(manager.engine().cascade()),
    }
}

/// One line per context, children indented under parents, ids ascending.
pub fn render_cascade(cascade: &Cascade) -> Vec<String> {
    fn walk(cascade: &Cascade, ctx: ContextId, depth: usize, out: &mut Vec<String>) {
        let context = cascade.context(ctx).expect("listed context exists");
        let class = cascade
            .activity(context.activity)
            .map(|a| a.class_id.to_string())
            .unwrap_or_default();
        let state = match context.state {
            ctxcm_core::cascade::ContextState::Active => "active",
            ctxcm_core::cascade::ContextState::Suspended => "suspended",
            ctxcm_core::cascade::ContextState::Ended => "ended",
        };
        out.push(format!("{}{} {} [{}]", "  ".repeat(depth), ctx, class, state));
        for child in cascade.children_of(ctx) {
            walk(cascade, child, depth + 1, out);
        }
    }
    let mut out = Vec::new();
    let roots: Vec<ContextId> = cascade
        .contexts()
        .filter(|c| c.parent_context.is_none())
        .map(|c| c.id)
        .collect();
    for root in roots {
        walk(cascade, root, 0, &mut out);
    }
    out
}

/// Cross-checks that the report counts match the log they were derived from.
/// Used by tests; kept here so the invariant stays next to the construction.
pub fn report_matches_log(report: &ReplayReport, log: &[LogRecord]) -> bool {
    let mut counts: BTreeMap<u8, u64> = BTreeMap::new();
    for record in log {
        *counts.entry(record.stage).or_default() += 1;
    }
    report.publishes == counts.get(&3).copied().unwrap_or(0)
        && report.drift_events == counts.get(&7).copied().unwrap_or(0)
        && report.suggestions.len() as u64 == counts.get(&5).copied().unwrap_or(0)
        && report.events_processed == counts.get(&6).copied().unwrap_or(0)
}
