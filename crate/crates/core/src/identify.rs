//! Pattern-based activity identification: scores sliding windows of observed
//! actions against per-class pattern signatures, ranks candidate classes,
//! detects drift out of the current context, and decides when the agent must
//! be asked to confirm.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActivityClass, AgentId, ClassId};

/// One observed action: what an agent did, when, and to what.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionEvent {
    pub timestamp: u64,
    pub agent: AgentId,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

impl ActionEvent {
    pub fn new(timestamp: u64, agent: impl Into<AgentId>, action: impl Into<String>) -> Self {
        Self {
            timestamp,
            agent: agent.into(),
            action: action.into(),
            target: None,
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_target(mut self, target: impl Into<String>) -> Self {
        self.target = Some(target.into());
        self
    }
}

/// Indexes a class of activities by the action tokens that characterize it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSignature {
    pub weighted_tokens: BTreeMap<String, f64>,
    pub min_score: f64,
}

impl PatternSignature {
    pub fn new(weighted_tokens: BTreeMap<String, f64>, min_score: f64) -> Self {
        Self {
            weighted_tokens,
            min_score,
        }
    }

    /// A signature with weight 1.0 for every token.
    pub fn uniform<I, S>(tokens: I, min_score: f64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            weighted_tokens: tokens.into_iter().map(|t| (t.into(), 1.0)).collect(),
            min_score,
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.weighted_tokens.values().sum()
    }
}

/// The last `capacity` events observed for one agent, oldest first.
#[derive(Debug, Clone)]
pub struct EventWindow {
    agent: AgentId,
    events: VecDeque<ActionEvent>,
    capacity: usize,
}

impl EventWindow {
    pub fn new(agent: impl Into<AgentId>, capacity: usize) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        Self {
            agent: agent.into(),
            events: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn agent(&self) -> &AgentId {
        &self.agent
    }

    pub fn push(&mut self, event: ActionEvent) {
        if self.events.len() == self.capacity {
            self.events.pop_front();
        }
        self.events.push_back(event);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> impl Iterator<Item = &ActionEvent> {
        self.events.iter()
    }

    /// The distinct action tokens currently in the window.
    pub fn action_set(&self) -> BTreeSet<&str> {
        self.events.iter().map(|e| e.action.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentifyError {
    #[error("event window is empty")]
    EmptyWindow,
    #[error("no candidate classes supplied")]
    NoCandidates,
}

/// Weighted token coverage of `signature` by the window: the summed weight of
/// signature tokens present in the window over the total signature weight.
/// 1.0 iff every token appears, 0.0 iff none do.
pub fn score(window: &EventWindow, signature: &PatternSignature) -> Result<f64, IdentifyError> {
    if window.is_empty() {
        return Err(IdentifyError::EmptyWindow);
    }
    let present = window.action_set();
    let mut matched = 0.0;
    let mut total = 0.0;
    for (token, weight) in &signature.weighted_tokens {
        total += weight;
        if present.contains(token.as_str()) {
            matched += weight;
        }
    }
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(matched / total)
}

/// The outcome of ranking candidates against a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Decision {
    Identified { class: ClassId },
    Ambiguous { first: ClassId, second: ClassId },
    NoMatch,
}

/// Candidate classes ranked by score, plus the decision derived from the
/// top scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub ranking: Vec<(ClassId, f64)>,
    pub decision: Decision,
}

/// Ranks `candidates` by signature score, descending, ties broken by class id.
///
/// The top candidate is identified when its score reaches its signature's
/// min-score and leads the runner-up by at least `margin`; it is ambiguous
/// when the score qualifies but the lead is narrower; anything else is a
/// no-match.
pub fn identify<'a, I>(
    window: &EventWindow,
    candidates: I,
    margin: f64,
) -> Result<IdentificationResult, IdentifyError>
where
    I: IntoIterator<Item = &'a ActivityClass>,
{
    if window.is_empty() {
        return Err(IdentifyError::EmptyWindow);
    }
    let mut ranking: Vec<(ClassId, f64, f64)> = Vec::new();
    for class in candidates {
        let s = score(window, &class.signature)?;
        ranking.push((class.id.clone(), s, class.signature.min_score));
    }
    if ranking.is_empty() {
        return Err(IdentifyError::NoCandidates);
    }
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let (top_id, top_score, top_min) = ranking[0].clone();
    let second = ranking.get(1).cloned();
    let second_score = second.as_ref().map(|s| s.1).unwrap_or(0.0);

    let decision = if top_score >= top_min && (top_score - second_score) >= margin {
        Decision::Identified { class: top_id }
    } else if top_score >= top_min {
        match second {
            Some((second_id, _, _)) => Decision::Ambiguous {
                first: top_id,
                second: second_id,
            },
            None => Decision::Identified { class: top_id },
        }
    } else {
        Decision::NoMatch
    };

    Ok(IdentificationResult {
        ranking: ranking.into_iter().map(|(id, s, _)| (id, s)).collect(),
        decision,
    })
}

/// How well recent behaviour still matches the current context's signature.
pub fn drift_score(current: &ActivityClass, window: &EventWindow) -> Result<f64, IdentifyError> {
    score(window, &current.signature)
}

/// True iff every one of the supplied most-recent drift scores is strictly
/// below the threshold. An empty history never signals drift.
pub fn detect_drift(history: &[f64], theta: f64) -> bool {
    !history.is_empty() && history.iter().all(|s| *s < theta)
}

/// Rolling drift detector over the last `k` scores for one agent.
///
/// Resets on every context switch; detection is suppressed for the first `k`
/// observations after a reset so that a fresh context is never abandoned on
/// the evidence that led to it.
#[derive(Debug, Clone)]
pub struct DriftTracker {
    scores: VecDeque<f64>,
    k: usize,
    theta: f64,
    observations: usize,
}

impl DriftTracker {
    pub fn new(k: usize, theta: f64) -> Self {
        assert!(k >= 1, "drift window must hold at least one score");
        Self {
            scores: VecDeque::with_capacity(k),
            k,
            theta,
            observations: 0,
        }
    }

    pub fn reset(&mut self) {
        self.scores.clear();
        self.observations = 0;
    }

    /// Records a drift score; returns true when drift fires.
    pub fn record(&mut self, score: f64) -> bool {
        if self.scores.len() == self.k {
            self.scores.pop_front();
        }
        self.scores.push_back(score);
        self.observations += 1;
        if self.observations <= self.k {
            return false;
        }
        self.scores.len() == self.k && detect_drift(self.scores.make_contiguous(), self.theta)
    }

    pub fn recent_scores(&self) -> Vec<f64> {
        self.scores.iter().copied().collect()
    }
}

/// Prompt for the agent naming the two top candidates of an ambiguous
/// identification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfirmationRequest {
    pub candidates: [(ClassId, f64); 2],
}

/// A confirmation request is produced exactly when the decision is ambiguous.
pub fn confirmation_request(result: &IdentificationResult) -> Option<ConfirmationRequest> {
    match &result.decision {
        Decision::Ambiguous { first, second } => {
            let lookup = |id: &ClassId| {
                result
                    .ranking
                    .iter()
                    .find(|(c, _)| c == id)
                    .map(|(_, s)| *s)
                    .unwrap_or(0.0)
            };
            Some(ConfirmationRequest {
                candidates: [
                    (first.clone(), lookup(first)),
                    (second.clone(), lookup(second)),
                ],
            })
        }
        _ => None,
    }
}
