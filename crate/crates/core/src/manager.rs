//! The Context Manager: mediates between an agent's activities and the
//! context-aware applications around them. It watches the action stream,
//! identifies the activity being performed, publishes the context hierarchy
//! to subscribers, offers suggestions from the context's process, records
//! behaviour per context, evolves generic contexts from closed records, and
//! tags artifacts with frozen context snapshots.
//!
//! All mutable state is owned by one `ContextManager` value; drivers
//! (replay harness, network service) serialize every command through it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::cascade::{
    ActivityId, CascadeError, ContextId, ContextInstance, ContextLevel,
};
use crate::formats::{
    encode_envelope, CandidateScore, ConfirmRequestBody, Envelope, EnvelopeKind, PublishBody,
    SubscribeBody, SuggestionBody,
};
use crate::identify::{
    self, ActionEvent, ConfirmationRequest, Decision, DriftTracker, EventWindow,
};
use crate::lifecycle::{EndMode, Engine, FocusState, LifecycleError};
use crate::model::{
    slug, AgentId, ClassId, GenericContextId, ModelError, Ontology, ResourceId,
};

/// Tunable behaviour of the manager loop. The defaults make the bundled
/// two-workshop scenario behave as narrated: ambiguous on shared evidence,
/// identified once a discriminating action appears.
#[derive(Debug, Clone)]
pub struct ManagerConfig {
    /// Sliding window capacity per agent, in events.
    pub window_capacity: usize,
    /// Minimum lead of the top candidate over the runner-up for a direct
    /// identification.
    pub margin: f64,
    /// Drift threshold: scores strictly below it count toward drift.
    pub drift_theta: f64,
    /// Number of consecutive low drift scores that signal drift.
    pub drift_k: usize,
    /// Replay steps a confirmation request stays open before the current
    /// context is kept.
    pub confirm_timeout_steps: u64,
    /// Global context information included in every publish.
    pub global: BTreeMap<String, String>,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        Self {
            window_capacity: 25,
            margin: 0.1,
            drift_theta: 0.2,
            drift_k: 3,
            confirm_timeout_steps: 1,
            global: BTreeMap::new(),
        }
    }
}

/// Where a subscription's envelopes go.
pub trait EnvelopeSink: Send {
    fn deliver(&mut self, envelope: &Envelope) -> std::io::Result<()>;
}

/// In-memory sink, for replay mode and tests.
#[derive(Debug, Clone, Default)]
pub struct MemorySink {
    envelopes: Arc<Mutex<Vec<Envelope>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn envelopes(&self) -> Vec<Envelope> {
        self.envelopes.lock().expect("sink lock").clone()
    }
}

impl EnvelopeSink for MemorySink {
    fn deliver(&mut self, envelope: &Envelope) -> std::io::Result<()> {
        self.envelopes.lock().expect("sink lock").push(envelope.clone());
        Ok(())
    }
}

/// Sink writing envelopes as JSON lines to any writer, e.g. a TCP stream.
pub struct WriterSink<W>(pub W);

impl<W: Write + Send> EnvelopeSink for WriterSink<W> {
    fn deliver(&mut self, envelope: &Envelope) -> std::io::Result<()> {
        self.0.write_all(encode_envelope(envelope).as_bytes())?;
        self.0.flush()
    }
}

/// A subscribed application. An empty filter means all agents.
pub struct Subscription {
    pub app_id: String,
    pub filter: BTreeSet<AgentId>,
    sink: Box<dyn EnvelopeSink>,
    seq: u64,
}

impl Subscription {
    fn matches(&self, agent: &AgentId) -> bool {
        self.filter.is_empty() || self.filter.contains(agent)
    }
}

/// Everything observed in one context: the events of the agents involved and
/// the resources they touched. Closed exactly when the context ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorRecord {
    pub context: ContextId,
    pub generic_origin: GenericContextId,
    pub events: Vec<ActionEvent>,
    pub resources_touched: BTreeSet<ResourceId>,
    pub closed: bool,
}

/// A rule-derived hint for the agent, grounded in the focus context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub agent: AgentId,
    pub text: String,
    pub basis: ContextId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offered_resource: Option<ResourceId>,
}

/// An artifact tagged with the frozen context cascade it was produced in.
/// The snapshot is self-contained: every level carries its full payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub artifact_id: String,
    pub name: String,
    pub produced_in: Vec<ContextLevel>,
    pub produced_at: u64,
}

/// One promoted resource with its observed frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Promotion {
    pub resource: ResourceId,
    pub touched_in: usize,
    pub support: usize,
    pub frequency: f64,
}

/// Outcome of evolving one generic context from closed behaviour records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionReport {
    pub generic: GenericContextId,
    pub support: usize,
    pub min_support: usize,
    pub threshold: f64,
    pub promotions: Vec<Promotion>,
    /// Resource ids that met the threshold but resolve nowhere in the
    /// ontology, left untouched.
    pub skipped_unknown: Vec<ResourceId>,
}

/// One structured log record per stage transition. Stage numbers follow the
/// manager loop (1 new activity, 2 identify, 3 publish, 5 suggest, 6 record,
/// 7 drift); stage 0 is used for loop plumbing notices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub ts: u64,
    pub agent: String,
    pub stage: u8,
    pub detail: String,
    #[serde(default)]
    pub data: Value,
}

/// An unanswered confirmation request.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingConfirmation {
    pub request_id: u64,
    pub candidates: [(ClassId, f64); 2],
    pub issued_at: u64,
}

#[derive(Debug, Error)]
pub enum ManagerError {
    #[error("application `{0}` is already subscribed")]
    DuplicateApp(String),
    #[error("agent {0} has no pending confirmation")]
    NoPendingConfirmation(AgentId),
    #[error("confirmation reply references unknown request {0}")]
    UnknownConfirmation(u64),
    #[error("class {0} is not a candidate of the pending confirmation")]
    InvalidConfirmationChoice(ClassId),
    #[error("context {0} has ended")]
    ContextEnded(ContextId),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The Context Manager service state.
pub struct ContextManager {
    engine: Engine,
    config: ManagerConfig,
    windows: BTreeMap<AgentId, EventWindow>,
    drift: BTreeMap<AgentId, DriftTracker>,
    records: BTreeMap<ContextId, BehaviorRecord>,
    subscriptions: Vec<Subscription>,
    pending_confirmations: BTreeMap<AgentId, PendingConfirmation>,
    pending_suggestions: BTreeMap<AgentId, Suggestion>,
    artifacts: BTreeMap<String, ArtifactRecord>,
    last_event_ts: BTreeMap<AgentId, u64>,
    log: Vec<LogRecord>,
    log_writer: Option<Box<dyn Write + Send>>,
    next_artifact: u64,
    next_request: u64,
}

impl ContextManager {
    pub fn new(ontology: Ontology, config: ManagerConfig) -> Self {
        Self {
            engine: Engine::new(ontology),
            config,
            windows: BTreeMap::new(),
            drift: BTreeMap::new(),
            records: BTreeMap::new(),
            subscriptions: Vec::new(),
            pending_confirmations: BTreeMap::new(),
            pending_suggestions: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            last_event_ts: BTreeMap::new(),
            log: Vec::new(),
            log_writer: None,
            next_artifact: 0,
            next_request: 0,
        }
    }

    /// Streams every log record, as it is written, to `writer` as JSON lines.
    pub fn set_log_writer(&mut self, writer: Box<dyn Write + Send>) {
        self.log_writer = Some(writer);
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut Engine {
        &mut self.engine
    }

    pub fn config(&self) -> &ManagerConfig {
        &self.config
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn records(&self) -> &BTreeMap<ContextId, BehaviorRecord> {
        &self.records
    }

    pub fn artifacts(&self) -> &BTreeMap<String, ArtifactRecord> {
        &self.artifacts
    }

    pub fn pending_confirmation(&self, agent: &AgentId) -> Option<&PendingConfirmation> {
        self.pending_confirmations.get(agent)
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = &Subscription> {
        self.subscriptions.iter()
    }

    fn emit(&mut self, ts: u64, agent: &str, stage: u8, detail: impl Into<String>, data: Value) {
        let record = LogRecord {
            ts,
            agent: agent.to_string(),
            stage,
            detail: detail.into(),
            data,
        };
        if let Some(writer) = &mut self.log_writer {
            let mut line = serde_json::to_string(&record).expect("log record serializes");
            line.push('\n');
            let _ = writer.write_all(line.as_bytes());
            let _ = writer.flush();
        }
        self.log.push(record);
    }

    /// Registers a subscriber: delivers an `ack` handshake and then, for any
    /// agent that already has a focus matching the filter, an immediate
    /// snapshot publish so a late joiner is never blind.
    pub fn subscribe(
        &mut self,
        app_id: impl Into<String>,
        filter: BTreeSet<AgentId>,
        sink: Box<dyn EnvelopeSink>,
    ) -> Result<(), ManagerError> {
        let app_id = app_id.into();
        if self.subscriptions.iter().any(|s| s.app_id == app_id) {
            return Err(ManagerError::DuplicateApp(app_id));
        }
        self.subscriptions.push(Subscription {
            app_id: app_id.clone(),
            filter,
            sink,
            seq: 0,
        });
        let tick = self.engine.tick();
        let index = self.subscriptions.len() - 1;
        let ack = json!({ "app_id": app_id });
        if !self.deliver_to(index, EnvelopeKind::Ack, &ack) {
            self.subscriptions.pop();
            self.emit(
                tick,
                "-",
                0,
                format!("subscription {app_id} detached after delivery failure"),
                Value::Null,
            );
            return Ok(());
        }

        let mut focused = Vec::new();
        {
            let subscription = self.subscriptions.last().expect("just pushed");
            for agent in self.engine.ontology().agents.keys() {
                if subscription.matches(agent)
                    && self.engine.current_focus(agent).ok().flatten().is_some()
                {
                    focused.push(agent.clone());
                }
            }
        }
        for agent in focused {
            if let Some(body) = self.publish_body(&agent) {
                let index = self.subscriptions.len() - 1;
                if self.deliver_to(index, EnvelopeKind::ContextPublish, &body) {
                    self.emit(
                        tick,
                        agent.as_str(),
                        0,
                        format!("late-join snapshot delivered to {app_id}"),
                        Value::Null,
                    );
                } else {
                    self.subscriptions.pop();
                    break;
                }
            }
        }
        Ok(())
    }

    pub fn unsubscribe(&mut self, app_id: &str) {
        self.subscriptions.retain(|s| s.app_id != app_id);
    }

    /// Sends an `error` envelope to one subscribed application.
    pub fn send_error(&mut self, app_id: &str, message: &str) {
        let Some(index) = self.subscriptions.iter().position(|s| s.app_id == app_id) else {
            return;
        };
        let body = json!({ "message": message });
        if !self.deliver_to(index, EnvelopeKind::Error, &body) {
            self.subscriptions.remove(index);
            let tick = self.engine.tick();
            self.emit(
                tick,
                "-",
                0,
                format!("subscription {app_id} detached after delivery failure"),
                Value::Null,
            );
        }
    }

    /// Logs a plumbing notice from a driver (stage 0).
    pub fn log_notice(&mut self, detail: impl Into<String>) {
        let tick = self.engine.tick();
        self.emit(tick, "-", 0, detail, Value::Null);
    }

    fn deliver_to(&mut self, index: usize, kind: EnvelopeKind, body: &Value) -> bool {
        let subscription = &mut self.subscriptions[index];
        subscription.seq += 1;
        let envelope = Envelope::new(kind, subscription.seq, body.clone());
        subscription.sink.deliver(&envelope).is_ok()
    }

    /// Sends `body` to every subscription matching `agent`; delivery failures
    /// detach the subscription rather than block the loop.
    fn broadcast(&mut self, agent: &AgentId, kind: EnvelopeKind, body: &Value) {
        let mut detached = Vec::new();
        for index in 0..self.subscriptions.len() {
            if !self.subscriptions[index].matches(agent) {
                continue;
            }
            if !self.deliver_to(index, kind, body) {
                detached.push(index);
            }
        }
        let tick = self.engine.tick();
        for index in detached.into_iter().rev() {
            let sub = self.subscriptions.remove(index);
            self.emit(
                tick,
                agent.as_str(),
                0,
                format!("subscription {} detached after delivery failure", sub.app_id),
                Value::Null,
            );
        }
    }

    fn publish_body(&self, agent: &AgentId) -> Option<Value> {
        let focus = self.engine.current_focus(agent).ok().flatten()?;
        let hierarchy = self.engine.cascade().snapshot_chain(focus).ok()?;
        let body = PublishBody {
            agent: agent.clone(),
            focus,
            hierarchy,
            global: self.config.global.clone(),
        };
        Some(serde_json::to_value(body).expect("publish body serializes"))
    }

    /// Publishes the agent's focus context and contextual hierarchy, plus the
    /// configured global context information, to all matching subscriptions.
    /// Without a focus this is a no-op with a logged notice.
    pub fn publish(&mut self, agent: &AgentId) -> Result<bool, ManagerError> {
        let tick = self.engine.tick();
        let Some(body) = self.publish_body(agent) else {
            self.emit(
                tick,
                agent.as_str(),
                0,
                "publish skipped: agent has no focus",
                Value::Null,
            );
            return Ok(false);
        };
        let focus = self.engine.current_focus(agent)?.expect("focus checked above");
        let chain = self.engine.cascade().snapshot_chain(focus)?;
        let classes: Vec<String> = chain.iter().map(|l| l.class.to_string()).collect();
        self.emit(
            tick,
            agent.as_str(),
            3,
            format!("published focus {} with {} levels", focus, chain.len()),
            json!({ "focus": focus, "levels": chain.len(), "classes": classes }),
        );
        self.broadcast(agent, EnvelopeKind::ContextPublish, &body);
        Ok(true)
    }

    /// Creates behaviour records for any contexts that do not have one yet.
    fn sync_records(&mut self) {
        let missing: Vec<(ContextId, GenericContextId)> = self
            .engine
            .cascade()
            .contexts()
            .filter(|c| !self.records.contains_key(&c.id))
            .map(|c| (c.id, c.generic_origin.clone()))
            .collect();
        for (context, generic_origin) in missing {
            self.records.insert(
                context,
                BehaviorRecord {
                    context,
                    generic_origin,
                    events: Vec::new(),
                    resources_touched: BTreeSet::new(),
                    closed: false,
                },
            );
        }
    }

    /// Begins an activity through the manager: the focus change is published
    /// and a behaviour record opened.
    pub fn begin_activity(
        &mut self,
        agent: &AgentId,
        class: &ClassId,
        parent: Option<ActivityId>,
    ) -> Result<(ActivityId, ContextId), ManagerError> {
        let result = self.engine.begin_activity(agent, class, parent)?;
        self.after_focus_change(agent)?;
        Ok(result)
    }

    /// Switches the agent's focus through the manager, publishing the change.
    pub fn switch_focus(
        &mut self,
        agent: &AgentId,
        target: ContextId,
    ) -> Result<FocusState, ManagerError> {
        let before = self.engine.current_focus(agent)?;
        let state = self.engine.switch_focus(agent, target)?;
        if before != Some(target) {
            self.after_focus_change(agent)?;
        }
        Ok(state)
    }

    /// Adds the agent to a live activity's shared context and focuses it.
    pub fn join_activity(
        &mut self,
        agent: &AgentId,
        activity: ActivityId,
    ) -> Result<ContextId, ManagerError> {
        let context = self.engine.join_activity(agent, activity)?;
        let tick = self.engine.tick();
        self.emit(
            tick,
            agent.as_str(),
            0,
            format!("joined activity {activity} sharing context {context}"),
            Value::Null,
        );
        self.after_focus_change(agent)?;
        Ok(context)
    }

    /// Ends an activity; ended contexts' records are closed with a frozen
    /// snapshot of their final payload.
    pub fn end_activity(
        &mut self,
        activity: ActivityId,
        mode: EndMode,
    ) -> Result<Vec<ContextInstance>, ManagerError> {
        let snapshots = self.engine.end_activity(activity, mode)?;
        let tick = self.engine.tick();
        for snapshot in &snapshots {
            self.sync_records();
            if let Some(record) = self.records.get_mut(&snapshot.id) {
                record.closed = true;
            }
            self.pending_suggestions.retain(|_, s| s.basis != snapshot.id);
            self.emit(
                tick,
                "-",
                0,
                format!("context {} ended with activity {}", snapshot.id, snapshot.activity),
                Value::Null,
            );
        }
        Ok(snapshots)
    }

    pub fn current_focus(&self, agent: &AgentId) -> Result<Option<ContextId>, ManagerError> {
        Ok(self.engine.current_focus(agent)?)
    }

    fn after_focus_change(&mut self, agent: &AgentId) -> Result<(), ManagerError> {
        self.sync_records();
        self.pending_suggestions.remove(agent);
        self.drift
            .entry(agent.clone())
            .or_insert_with(|| DriftTracker::new(self.config.drift_k, self.config.drift_theta))
            .reset();
        let focus = self.engine.current_focus(agent)?;
        let tick = self.engine.tick();
        self.emit(
            tick,
            agent.as_str(),
            0,
            match focus {
                Some(ctx) => format!("focus moved to {ctx}"),
                None => "focus cleared".to_string(),
            },
            Value::Null,
        );
        self.publish(agent)?;
        self.maybe_suggest(agent);
        Ok(())
    }

    /// Stage 5: if the focus process's next un-executed atomic step names an
    /// action never yet seen in the context's record, suggest it. At most one
    /// suggestion is pending per agent.
    pub fn suggest(&self, agent: &AgentId) -> Result<Option<Suggestion>, ManagerError> {
        let Some(focus) = self.engine.current_focus(agent)? else {
            return Ok(None);
        };
        let payload = self.engine.cascade().effective_context(focus)?;
        let Some(process) = payload.process else {
            return Ok(None);
        };
        let executed: BTreeSet<String> = self
            .records
            .get(&focus)
            .map(|record| record.events.iter().map(|e| slug(&e.action)).collect())
            .unwrap_or_default();
        let next_step = process
            .value
            .atomic_steps()
            .into_iter()
            .find(|step| !executed.contains(&slug(step)));
        let Some(step) = next_step else {
            return Ok(None);
        };
        let context = self.engine.cascade().context(focus)?;
        let offered_resource = context
            .resources
            .values()
            .find(|r| slug(&r.name) == slug(step))
            .map(|r| r.id.clone());
        Ok(Some(Suggestion {
            agent: agent.clone(),
            text: step.to_string(),
            basis: focus,
            offered_resource,
        }))
    }

    fn maybe_suggest(&mut self, agent: &AgentId) {
        let Ok(Some(suggestion)) = self.suggest(agent) else {
            return;
        };
        if self.pending_suggestions.get(agent) == Some(&suggestion) {
            return;
        }
        let tick = self.engine.tick();
        self.emit(
            tick,
            agent.as_str(),
            5,
            format!("suggested \"{}\"", suggestion.text),
            json!({ "text": suggestion.text, "basis": suggestion.basis }),
        );
        let body = SuggestionBody {
            agent: suggestion.agent.clone(),
            text: suggestion.text.clone(),
            basis: suggestion.basis,
            offered_resource: suggestion.offered_resource.clone(),
        };
        let body = serde_json::to_value(body).expect("suggestion body serializes");
        self.broadcast(agent, EnvelopeKind::Suggestion, &body);
        self.pending_suggestions.insert(agent.clone(), suggestion);
    }

    /// Stage 2: identify over the agent's window; on a clear identification
    /// switch to (or begin) the matching context chain, on ambiguity open a
    /// confirmation request, on no-match keep observing.
    fn attempt_identification(&mut self, agent: &AgentId, tick: u64) -> Result<(), ManagerError> {
        let window = match self.windows.get(agent) {
            Some(w) if !w.is_empty() => w,
            _ => return Ok(()),
        };
        let ontology = self.engine.ontology();
        let candidates: Vec<_> = ontology.activity_classes.values().collect();
        let result = match identify::identify(window, candidates, self.config.margin) {
            Ok(result) => result,
            Err(_) => return Ok(()),
        };
        let ranking_data = json!({
            "ranking": result.ranking.iter().map(|(c, s)| json!([c, s])).collect::<Vec<_>>(),
        });
        match &result.decision {
            Decision::Identified { class } => {
                let class = class.clone();
                self.emit(
                    tick,
                    agent.as_str(),
                    2,
                    format!("identified {class}"),
                    ranking_data,
                );
                self.switch_to_class(agent, &class)?;
            }
            Decision::Ambiguous { first, second } => {
                let request = identify::confirmation_request(&result)
                    .expect("ambiguous decision always yields a request");
                self.emit(
                    tick,
                    agent.as_str(),
                    2,
                    format!("ambiguous between {first} and {second}"),
                    ranking_data,
                );
                self.open_confirmation(agent, request, tick);
            }
            Decision::NoMatch => {
                self.emit(tick, agent.as_str(), 2, "no-match", ranking_data);
            }
        }
        Ok(())
    }

    /// Focuses an existing live context of `class` involving the agent, or
    /// begins the class with its full ancestor chain.
    fn switch_to_class(&mut self, agent: &AgentId, class: &ClassId) -> Result<(), ManagerError> {
        let current = self.engine.current_focus(agent)?;
        if let Some(focus) = current {
            let ctx = self.engine.cascade().context(focus)?;
            let activity = self.engine.cascade().activity(ctx.activity)?;
            if &activity.class_id == class {
                // Re-identified the current context; nothing to switch.
                self.drift
                    .entry(agent.clone())
                    .or_insert_with(|| DriftTracker::new(self.config.drift_k, self.config.drift_theta))
                    .reset();
                return Ok(());
            }
        }
        let existing = self
            .engine
            .cascade()
            .contexts()
            .filter(|c| !c.is_ended() && c.agents_involved.contains(agent))
            .filter_map(|c| {
                let activity = self.engine.cascade().activity(c.activity).ok()?;
                (&activity.class_id == class && activity.is_live()).then_some(c.id)
            })
            .min();
        match existing {
            Some(ctx) => {
                self.engine.switch_focus(agent, ctx)?;
            }
            None => {
                self.engine.begin_activity_chain(agent, class)?;
            }
        }
        self.after_focus_change(agent)?;
        Ok(())
    }

    fn open_confirmation(&mut self, agent: &AgentId, request: ConfirmationRequest, tick: u64) {
        self.next_request += 1;
        let pending = PendingConfirmation {
            request_id: self.next_request,
            candidates: request.candidates.clone(),
            issued_at: tick,
        };
        let body = ConfirmRequestBody {
            agent: agent.clone(),
            request_id: pending.request_id,
            candidates: request
                .candidates
                .iter()
                .map(|(class, score)| CandidateScore {
                    class: class.clone(),
                    score: *score,
                })
                .collect(),
        };
        let body = serde_json::to_value(body).expect("confirm request serializes");
        self.emit(
            tick,
            agent.as_str(),
            2,
            format!(
                "confirmation requested: {} or {}",
                pending.candidates[0].0, pending.candidates[1].0
            ),
            json!({ "request_id": pending.request_id }),
        );
        self.pending_confirmations.insert(agent.clone(), pending);
        self.broadcast(agent, EnvelopeKind::ConfirmRequest, &body);
    }

    /// Resolves a pending confirmation with the agent's choice; the context
    /// switch deferred by the ambiguity happens now.
    pub fn reply_confirmation(
        &mut self,
        agent: &AgentId,
        request_id: u64,
        chosen: &ClassId,
    ) -> Result<(), ManagerError> {
        let pending = self
            .pending_confirmations
            .get(agent)
            .ok_or_else(|| ManagerError::NoPendingConfirmation(agent.clone()))?;
        if pending.request_id != request_id {
            return Err(ManagerError::UnknownConfirmation(request_id));
        }
        if !pending.candidates.iter().any(|(c, _)| c == chosen) {
            return Err(ManagerError::InvalidConfirmationChoice(chosen.clone()));
        }
        self.pending_confirmations.remove(agent);
        let tick = self.engine.tick();
        self.emit(
            tick,
            agent.as_str(),
            2,
            format!("confirmed {chosen}"),
            json!({ "request_id": request_id }),
        );
        self.switch_to_class(agent, &chosen.clone())?;
        Ok(())
    }

    /// Expires the agent's pending confirmation: the current context is kept.
    pub fn expire_confirmation(&mut self, agent: &AgentId) {
        if self.pending_confirmations.remove(agent).is_some() {
            let tick = self.engine.tick();
            self.emit(
                tick,
                agent.as_str(),
                0,
                "confirmation timed out; keeping current context",
                Value::Null,
            );
        }
    }

    /// True when the agent's pending confirmation has outlived the configured
    /// timeout at `now`.
    pub fn confirmation_expired(&self, agent: &AgentId, now: u64) -> bool {
        self.pending_confirmations
            .get(agent)
            .is_some_and(|p| now >= p.issued_at + self.config.confirm_timeout_steps)
    }

    /// One turn of the manager loop for one observed event. Malformed events
    /// (unknown agent, empty action, per-agent timestamp regression) are
    /// logged and skipped; the loop never halts.
    pub fn handle_event(&mut self, event: ActionEvent) {
        let agent = event.agent.clone();
        let ts = event.timestamp;
        if event.action.is_empty() {
            self.emit(ts, agent.as_str(), 0, "skipped event with empty action", Value::Null);
            return;
        }
        if !self.engine.ontology().agents.contains_key(&agent) {
            self.emit(
                ts,
                agent.as_str(),
                0,
                format!("skipped event from unknown agent {agent}"),
                Value::Null,
            );
            return;
        }
        if let Some(&last) = self.last_event_ts.get(&agent) {
            if ts < last {
                self.emit(
                    ts,
                    agent.as_str(),
                    0,
                    format!("skipped event: timestamp {ts} regresses below {last}"),
                    Value::Null,
                );
                return;
            }
        }
        self.last_event_ts.insert(agent.clone(), ts);
        self.engine.set_tick(ts);

        let capacity = self.config.window_capacity;
        self.windows
            .entry(agent.clone())
            .or_insert_with(|| EventWindow::new(agent.clone(), capacity))
            .push(event.clone());

        if !self.pending_confirmations.contains_key(&agent) {
            let focus = self.engine.current_focus(&agent).expect("agent known");
            match focus {
                None => {
                    let _ = self.attempt_identification(&agent, ts);
                }
                Some(focus_ctx) => {
                    if let Some(drift_scores) = self.observe_drift(&agent, focus_ctx) {
                        self.emit(
                            ts,
                            agent.as_str(),
                            7,
                            "drift detected: behaviour left the current context",
                            json!({ "scores": drift_scores, "theta": self.config.drift_theta }),
                        );
                        self.emit(ts, agent.as_str(), 1, "assuming a new activity", Value::Null);
                        let _ = self.attempt_identification(&agent, ts);
                    }
                }
            }
        }

        self.maybe_suggest(&agent);
        self.record_event(&agent, event);
    }

    /// Stage 7: score the window against the focus class's signature and
    /// feed the rolling tracker. Returns the recent scores when drift fires.
    fn observe_drift(&mut self, agent: &AgentId, focus: ContextId) -> Option<Vec<f64>> {
        let window = self.windows.get(agent)?;
        let cascade = self.engine.cascade();
        let activity = cascade.context(focus).ok().map(|c| c.activity)?;
        let class_id = cascade.activity(activity).ok()?.class_id.clone();
        let class = self.engine.ontology().activity_classes.get(&class_id)?;
        let score = identify::drift_score(class, window).ok()?;
        let tracker = self
            .drift
            .entry(agent.clone())
            .or_insert_with(|| DriftTracker::new(self.config.drift_k, self.config.drift_theta));
        tracker.record(score).then(|| tracker.recent_scores())
    }

    /// Stage 6: append the event to the focus context's behaviour record and
    /// note any ontology resources it touched.
    fn record_event(&mut self, agent: &AgentId, event: ActionEvent) {
        let Ok(Some(focus)) = self.engine.current_focus(agent) else {
            return;
        };
        self.sync_records();
        let mut touched = Vec::new();
        if let Some(target) = &event.target {
            let id = ResourceId::from(target.as_str());
            if self.engine.ontology().resources.contains_key(&id) {
                touched.push(id);
            }
        }
        if let Some(named) = event.attributes.get("resource") {
            let id = ResourceId::from(named.as_str());
            if self.engine.ontology().resources.contains_key(&id) {
                touched.push(id);
            }
        }
        let action = event.action.clone();
        let ts = event.timestamp;
        if let Some(record) = self.records.get_mut(&focus) {
            record.events.push(event);
            record.resources_touched.extend(touched);
        }
        if let Some(pending) = self.pending_suggestions.get(agent) {
            if slug(&pending.text) == slug(&action) {
                self.pending_suggestions.remove(agent);
            }
        }
        self.emit(
            ts,
            agent.as_str(),
            6,
            format!("recorded {action} in {focus}"),
            Value::Null,
        );
    }

    /// Processes a subscribe envelope body coming off a connection.
    pub fn handle_subscribe(
        &mut self,
        body: SubscribeBody,
        sink: Box<dyn EnvelopeSink>,
    ) -> Result<(), ManagerError> {
        self.subscribe(body.app_id, body.agents.into_iter().collect(), sink)
    }

    /// Stage 1-7 loop over a finite, timestamp-ordered event source. An empty
    /// source is a no-op.
    pub fn run_loop<I: IntoIterator<Item = ActionEvent>>(&mut self, events: I) {
        for event in events {
            self.handle_event(event);
        }
    }

    /// Tags an artifact with a deep frozen snapshot of the full effective
    /// context cascade at call time.
    pub fn tag_artifact(
        &mut self,
        name: impl Into<String>,
        ctx: ContextId,
    ) -> Result<ArtifactRecord, ManagerError> {
        let context = self.engine.cascade().context(ctx)?;
        if context.is_ended() {
            return Err(ManagerError::ContextEnded(ctx));
        }
        let produced_in = self.engine.cascade().snapshot_chain(ctx)?;
        self.next_artifact += 1;
        let record = ArtifactRecord {
            artifact_id: format!("artifact-{}", self.next_artifact),
            name: name.into(),
            produced_in,
            produced_at: self.engine.tick(),
        };
        let tick = self.engine.tick();
        self.emit(
            tick,
            "-",
            0,
            format!("tagged artifact {} ({}) in {ctx}", record.artifact_id, record.name),
            Value::Null,
        );
        self.artifacts.insert(record.artifact_id.clone(), record.clone());
        Ok(record)
    }

    /// Evolves a generic context from this manager's closed records and
    /// installs the new ontology version.
    pub fn evolve(
        &mut self,
        generic: &GenericContextId,
        fraction: f64,
        min_support: usize,
    ) -> Result<EvolutionReport, ManagerError> {
        let (ontology, report) = evolve_ontology(
            self.engine.ontology(),
            self.records.values(),
            generic,
            fraction,
            min_support,
        )?;
        self.engine.swap_ontology(ontology);
        let tick = self.engine.tick();
        self.emit(
            tick,
            "-",
            0,
            format!(
                "evolved {generic}: {} promotion(s) from {} closed record(s)",
                report.promotions.len(),
                report.support
            ),
            Value::Null,
        );
        Ok(report)
    }
}

/// Promotes into `generic` every resource touched in at least
/// `fraction * m` of the `m` closed records with that origin, provided
/// `m >= min_support`. Records are never mutated and resources are never
/// removed; the new ontology version is returned alongside the report.
pub fn evolve_ontology<'a, I>(
    ontology: &Ontology,
    records: I,
    generic: &GenericContextId,
    fraction: f64,
    min_support: usize,
) -> Result<(Ontology, EvolutionReport), ManagerError>
where
    I: IntoIterator<Item = &'a BehaviorRecord>,
{
    if !ontology.generic_contexts.contains_key(generic) {
        return Err(ModelError::UnknownGenericContext(generic.clone()).into());
    }

    let closed: Vec<&BehaviorRecord> = records
        .into_iter()
        .filter(|r| r.closed && &r.generic_origin == generic)
        .collect();
    let support = closed.len();

    let mut report = EvolutionReport {
        generic: generic.clone(),
        support,
        min_support,
        threshold: fraction,
        promotions: Vec::new(),
        skipped_unknown: Vec::new(),
    };
    let mut evolved = ontology.clone();

    if support >= min_support && support > 0 {
        let mut counts: BTreeMap<ResourceId, usize> = BTreeMap::new();
        for record in &closed {
            for resource in &record.resources_touched {
                *counts.entry(resource.clone()).or_default() += 1;
            }
        }
        let target = evolved
            .generic_contexts
            .get_mut(generic)
            .expect("generic checked above");
        for (resource, count) in counts {
            if (count as f64) < fraction * support as f64 {
                continue;
            }
            if target.resources.contains(&resource) {
                continue;
            }
            if !ontology.resources.contains_key(&resource) {
                report.skipped_unknown.push(resource);
                continue;
            }
            report.promotions.push(Promotion {
                resource: resource.clone(),
                touched_in: count,
                support,
                frequency: count as f64 / support as f64,
            });
            target.resources.insert(resource);
        }
    }

    Ok((evolved, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{Resource, ResourceKind};

    fn manager() -> ContextManager {
        ContextManager::new(fixtures::workshop_ontology(), ManagerConfig::default())
    }

    fn self_id() -> AgentId {
        AgentId::from("self")
    }

    fn record_with(
        context: u64,
        generic: &str,
        touched: &[&str],
        closed: bool,
    ) -> BehaviorRecord {
        BehaviorRecord {
            context: ContextId(context),
            generic_origin: GenericContextId::from(generic),
            events: Vec::new(),
            resources_touched: touched.iter().map(|r| ResourceId::from(*r)).collect(),
            closed,
        }
    }

    #[test]
    fn publish_carries_four_level_hierarchy_innermost_first() {
        let mut mgr = manager();
        let sink = MemorySink::new();
        mgr.subscribe("app", BTreeSet::new(), Box::new(sink.clone())).unwrap();
        mgr.begin_activity_chain_for_test();

        let envelopes = sink.envelopes();
        let publishes: Vec<_> = envelopes
            .iter()
            .filter(|e| e.kind == EnvelopeKind::ContextPublish)
            .collect();
        assert_eq!(publishes.len(), 1);
        let body: PublishBody = serde_json::from_value(publishes[0].body.clone()).unwrap();
        assert_eq!(body.hierarchy.len(), 4);
        assert_eq!(body.hierarchy[0].class, fixtures::demo_workshop_class());
        assert_eq!(body.hierarchy[3].class, fixtures::job_class());
        assert!(body.hierarchy[0]
            .resources
            .contains_key(&ResourceId::from("travel-department")));
    }

    impl ContextManager {
        fn begin_activity_chain_for_test(&mut self) {
            let agent = AgentId::from("self");
            let class = crate::fixtures::demo_workshop_class();
            self.engine.begin_activity_chain(&agent, &class).unwrap();
            self.after_focus_change(&agent).unwrap();
        }
    }

    #[test]
    fn filtered_subscription_receives_nothing_for_other_agents() {
        let mut mgr = manager();
        let sink = MemorySink::new();
        mgr.subscribe("app", [AgentId::from("someone-else")].into(), Box::new(sink.clone()))
            .unwrap();
        mgr.begin_activity_chain_for_test();
        // Only the subscribe handshake; no publishes or suggestions.
        let envelopes = sink.envelopes();
        assert_eq!(envelopes.len(), 1);
        assert_eq!(envelopes[0].kind, EnvelopeKind::Ack);
    }

    #[test]
    fn broadcast_envelopes_are_byte_identical_across_subscribers() {
        let mut mgr = manager();
        let a = MemorySink::new();
        let b = MemorySink::new();
        mgr.subscribe("a", BTreeSet::new(), Box::new(a.clone())).unwrap();
        mgr.subscribe("b", BTreeSet::new(), Box::new(b.clone())).unwrap();
        mgr.begin_activity_chain_for_test();
        // Broadcast envelopes (everything after the per-connection ack) are
        // byte-identical across subscribers.
        let broadcast = |sink: &MemorySink| {
            sink.envelopes()
                .iter()
                .filter(|e| e.kind != EnvelopeKind::Ack)
                .map(encode_envelope)
                .collect::<Vec<_>>()
        };
        let left = broadcast(&a);
        assert!(!left.is_empty());
        assert_eq!(left, broadcast(&b));
    }

    #[test]
    fn publish_without_focus_is_logged_noop() {
        let mut mgr = manager();
        assert!(!mgr.publish(&self_id()).unwrap());
        assert!(mgr.log().iter().any(|r| r.detail.contains("no focus")));
    }

    struct FailingSink;
    impl EnvelopeSink for FailingSink {
        fn deliver(&mut self, _: &Envelope) -> std::io::Result<()> {
            Err(std::io::Error::other("gone"))
        }
    }

    #[test]
    fn delivery_failure_detaches_subscription() {
        let mut mgr = manager();
        mgr.subscribe("flaky", BTreeSet::new(), Box::new(FailingSink)).unwrap();
        mgr.begin_activity_chain_for_test();
        assert_eq!(mgr.subscriptions().count(), 0);
        assert!(mgr.log().iter().any(|r| r.detail.contains("detached")));
    }

    #[test]
    fn duplicate_app_id_is_rejected() {
        let mut mgr = manager();
        mgr.subscribe("app", BTreeSet::new(), Box::new(MemorySink::new())).unwrap();
        assert!(matches!(
            mgr.subscribe("app", BTreeSet::new(), Box::new(MemorySink::new())),
            Err(ManagerError::DuplicateApp(_))
        ));
    }

    #[test]
    fn late_join_subscriber_gets_snapshot() {
        let mut mgr = manager();
        mgr.begin_activity_chain_for_test();
        let sink = MemorySink::new();
        mgr.subscribe("late", BTreeSet::new(), Box::new(sink.clone())).unwrap();
        let envelopes = sink.envelopes();
        assert_eq!(envelopes.len(), 2);
        assert_eq!(envelopes[0].kind, EnvelopeKind::Ack);
        assert_eq!(envelopes[0].seq, 1);
        assert_eq!(envelopes[1].kind, EnvelopeKind::ContextPublish);
        assert_eq!(envelopes[1].seq, 2);
    }

    #[test]
    fn join_shares_context_and_publishes() {
        let mut ontology = fixtures::workshop_ontology();
        ontology.insert_agent(crate::model::Agent {
            id: AgentId::from("peer"),
            kind: crate::model::AgentKind::Person,
            name: "Peer".into(),
        });
        let mut mgr = ContextManager::new(ontology, ManagerConfig::default());
        let (activity, ctx) = mgr
            .begin_activity(&self_id(), &fixtures::demo_workshop_class(), None)
            .unwrap();
        let joined = mgr.join_activity(&AgentId::from("peer"), activity).unwrap();
        assert_eq!(joined, ctx);
        assert_eq!(
            mgr.engine().cascade().context(ctx).unwrap().agents_involved.len(),
            2
        );

        // Cascade teardown clears both agents' focus.
        mgr.end_activity(activity, EndMode::Cascade).unwrap();
        assert_eq!(mgr.current_focus(&self_id()).unwrap(), None);
        assert_eq!(mgr.current_focus(&AgentId::from("peer")).unwrap(), None);
        assert!(mgr.records()[&ctx].closed);
    }

    #[test]
    fn suggest_walks_the_process() {
        let mut mgr = manager();
        mgr.begin_activity_chain_for_test();
        let agent = self_id();
        let first = mgr.suggest(&agent).unwrap().unwrap();
        assert_eq!(first.text, "Initial Agenda");

        // Execute the first two steps; the third is suggested next.
        let focus = mgr.current_focus(&agent).unwrap().unwrap();
        for (ts, action) in [(1, "initial-agenda"), (2, "contact-participants")] {
            let mut event = ActionEvent::new(ts, "self", action);
            event.target = Some("workshop-agenda.doc".into());
            mgr.handle_event(event);
        }
        let third = mgr.suggest(&agent).unwrap().unwrap();
        assert_eq!(third.text, "Book Rooms");
        assert_eq!(third.basis, focus);
    }

    #[test]
    fn suggest_exhausted_process_is_none() {
        let mut mgr = manager();
        mgr.begin_activity_chain_for_test();
        for (ts, action) in [
            (1, "initial-agenda"),
            (2, "contact-participants"),
            (3, "book-rooms"),
            (4, "book-travel"),
        ] {
            mgr.handle_event(ActionEvent::new(ts, "self", action));
        }
        assert_eq!(mgr.suggest(&self_id()).unwrap(), None);
    }

    #[test]
    fn events_are_recorded_once_in_the_focus_context() {
        let mut mgr = manager();
        mgr.begin_activity_chain_for_test();
        let focus = mgr.current_focus(&self_id()).unwrap().unwrap();
        mgr.handle_event(
            ActionEvent::new(5, "self", "check-calendar").with_target("calendar"),
        );
        let total: usize = mgr.records().values().map(|r| r.events.len()).sum();
        assert_eq!(total, 1);
        let record = &mgr.records()[&focus];
        assert_eq!(record.events.len(), 1);
        assert!(record.resources_touched.contains(&ResourceId::from("calendar")));
    }

    #[test]
    fn malformed_events_are_skipped_not_fatal() {
        let mut mgr = manager();
        mgr.handle_event(ActionEvent::new(1, "nobody", "act"));
        mgr.handle_event(ActionEvent::new(5, "self", "act"));
        mgr.handle_event(ActionEvent::new(3, "self", "late")); // regression
        mgr.handle_event(ActionEvent::new(6, "self", ""));
        let skips = mgr
            .log()
            .iter()
            .filter(|r| r.detail.starts_with("skipped"))
            .count();
        assert_eq!(skips, 3);
    }

    #[test]
    fn evolve_promotes_at_threshold() {
        // 3 of 3 records touch the projector at p=0.6, n=3.
        let ontology = fixtures::workshop_ontology();
        let generic = GenericContextId::from("organise-handheld-demo-workshop-context");
        let records: Vec<BehaviorRecord> = (0..3)
            .map(|i| record_with(i, generic.as_str(), &["video-projector"], true))
            .collect();
        let (evolved, report) =
            evolve_ontology(&ontology, records.iter(), &generic, 0.6, 3).unwrap();
        assert_eq!(report.promotions.len(), 1);
        assert_eq!(report.promotions[0].resource, ResourceId::from("video-projector"));
        assert_eq!(report.promotions[0].touched_in, 3);
        assert!(evolved.generic_contexts[&generic]
            .resources
            .contains(&ResourceId::from("video-projector")));
        // Original untouched.
        assert!(!ontology.generic_contexts[&generic]
            .resources
            .contains(&ResourceId::from("video-projector")));
    }

    #[test]
    fn evolve_support_gate_blocks_small_samples() {
        let ontology = fixtures::workshop_ontology();
        let generic = GenericContextId::from("organise-handheld-demo-workshop-context");
        let records: Vec<BehaviorRecord> = (0..2)
            .map(|i| record_with(i, generic.as_str(), &["video-projector"], true))
            .collect();
        let (_, report) = evolve_ontology(&ontology, records.iter(), &generic, 0.6, 3).unwrap();
        assert_eq!(report.support, 2);
        assert!(report.promotions.is_empty());
    }

    #[test]
    fn evolve_below_frequency_not_promoted() {
        let ontology = fixtures::workshop_ontology();
        let generic = GenericContextId::from("organise-handheld-demo-workshop-context");
        let mut records = vec![record_with(0, generic.as_str(), &["video-projector"], true)];
        records.push(record_with(1, generic.as_str(), &[], true));
        records.push(record_with(2, generic.as_str(), &[], true));
        let (_, report) = evolve_ontology(&ontology, records.iter(), &generic, 0.6, 3).unwrap();
        assert!(report.promotions.is_empty());
    }

    #[test]
    fn evolve_ignores_open_records_and_other_origins() {
        let ontology = fixtures::workshop_ontology();
        let generic = GenericContextId::from("organise-handheld-demo-workshop-context");
        let records = vec![
            record_with(0, generic.as_str(), &["video-projector"], false),
            record_with(1, "recruit-new-staff-context", &["video-projector"], true),
        ];
        let (_, report) = evolve_ontology(&ontology, records.iter(), &generic, 0.1, 0).unwrap();
        assert_eq!(report.support, 0);
        assert!(report.promotions.is_empty());
    }

    #[test]
    fn evolve_unknown_generic_errors() {
        let ontology = fixtures::workshop_ontology();
        assert!(matches!(
            evolve_ontology(&ontology, [], &GenericContextId::from("ghost"), 0.5, 1),
            Err(ManagerError::Model(ModelError::UnknownGenericContext(_)))
        ));
    }

    #[test]
    fn evolve_skips_unresolvable_resources() {
        let ontology = fixtures::workshop_ontology();
        let generic = GenericContextId::from("organise-handheld-demo-workshop-context");
        let records: Vec<BehaviorRecord> = (0..3)
            .map(|i| record_with(i, generic.as_str(), &["not-a-resource"], true))
            .collect();
        let (evolved, report) =
            evolve_ontology(&ontology, records.iter(), &generic, 0.6, 3).unwrap();
        assert!(report.promotions.is_empty());
        assert_eq!(report.skipped_unknown, vec![ResourceId::from("not-a-resource")]);
        assert!(crate::model::validate_ontology(&evolved).is_empty());
    }

    #[test]
    fn tag_artifact_freezes_the_cascade() {
        let mut mgr = manager();
        mgr.begin_activity_chain_for_test();
        let focus = mgr.current_focus(&self_id()).unwrap().unwrap();
        let record = mgr.tag_artifact("workshop-agenda.doc", focus).unwrap();
        assert_eq!(record.produced_in.len(), 4);
        let before = serde_json::to_string(&mgr.artifacts()[&record.artifact_id]).unwrap();

        // Mutating the live context and even ending it leaves the snapshot
        // byte-identical.
        mgr.engine_mut()
            .cascade_mut()
            .add_resource(focus, Resource::new("video-projector", ResourceKind::Device, "Video projector"))
            .unwrap();
        let root = mgr.engine().cascade().chain(focus).unwrap()[3];
        let root_activity = mgr.engine().cascade().context(root).unwrap().activity;
        mgr.end_activity(root_activity, EndMode::Cascade).unwrap();
        let after = serde_json::to_string(&mgr.artifacts()[&record.artifact_id]).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn tag_artifact_snapshots_differ_by_exactly_the_added_resource() {
        let mut mgr = manager();
        mgr.begin_activity_chain_for_test();
        let focus = mgr.current_focus(&self_id()).unwrap().unwrap();
        let first = mgr.tag_artifact("before.doc", focus).unwrap();
        mgr.engine_mut()
            .cascade_mut()
            .add_resource(focus, Resource::new("video-projector", ResourceKind::Device, "Video projector"))
            .unwrap();
        let second = mgr.tag_artifact("after.doc", focus).unwrap();

        let mut first_inner = first.produced_in[0].clone();
        let second_inner = &second.produced_in[0];
        assert_ne!(first_inner.resources, second_inner.resources);
        first_inner.resources.insert(
            ResourceId::from("video-projector"),
            Resource::new("video-projector", ResourceKind::Device, "Video projector"),
        );
        assert_eq!(&first_inner.resources, &second_inner.resources);
        assert_eq!(first.produced_in[1..], second.produced_in[1..]);
    }

    #[test]
    fn tag_artifact_on_ended_context_errors() {
        let mut mgr = manager();
        let (activity, ctx) = mgr
            .begin_activity(&self_id(), &fixtures::demo_workshop_class(), None)
            .unwrap();
        mgr.end_activity(activity, EndMode::Strict).unwrap();
        assert!(matches!(
            mgr.tag_artifact("late.doc", ctx),
            Err(ManagerError::ContextEnded(_))
        ));
    }

    #[test]
    fn reply_confirmation_validates_request_and_choice() {
        let mut mgr = manager();
        // Build the ambiguous state via shared evidence.
        for (ts, action) in [(1, "book-flight"), (2, "book-hotel")] {
            mgr.handle_event(ActionEvent::new(ts, "self", action));
        }
        let pending = mgr.pending_confirmation(&self_id()).cloned().unwrap();
        assert!(matches!(
            mgr.reply_confirmation(&self_id(), pending.request_id + 7, &fixtures::demo_workshop_class()),
            Err(ManagerError::UnknownConfirmation(_))
        ));
        assert!(matches!(
            mgr.reply_confirmation(&self_id(), pending.request_id, &fixtures::job_class()),
            Err(ManagerError::InvalidConfirmationChoice(_))
        ));
        mgr.reply_confirmation(&self_id(), pending.request_id, &fixtures::demo_workshop_class())
            .unwrap();
        assert!(mgr.pending_confirmation(&self_id()).is_none());
        assert!(mgr.current_focus(&self_id()).unwrap().is_some());
    }

    #[test]
    fn confirmation_timeout_keeps_current_context() {
        let mut mgr = manager();
        for (ts, action) in [(1, "book-flight"), (2, "book-hotel")] {
            mgr.handle_event(ActionEvent::new(ts, "self", action));
        }
        assert!(mgr.pending_confirmation(&self_id()).is_some());
        assert!(!mgr.confirmation_expired(&self_id(), 2));
        assert!(mgr.confirmation_expired(&self_id(), 3));
        mgr.expire_confirmation(&self_id());
        assert!(mgr.pending_confirmation(&self_id()).is_none());
        assert_eq!(mgr.current_focus(&self_id()).unwrap(), None);
    }
}
