//! Runtime nesting of activity and context instances. Contexts cascade along
//! the activity hierarchy: an outer context influences every descendant
//! activity, and resolution queries walk the cascade innermost-first so that
//! specific contexts shadow general ones.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentId, ClassId, GenericContextId, ProcessTemplate, Resource, ResourceId};

/// Identifier of a runtime activity instance.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ActivityId(pub u64);

impl std::fmt::Display for ActivityId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// Identifier of a runtime context instance.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ContextId(pub u64);

impl std::fmt::Display for ContextId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivityState {
    Live,
    Ended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextState {
    Active,
    Suspended,
    Ended,
}

/// One performance of an activity class by one or more agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityInstance {
    pub id: ActivityId,
    pub class_id: ClassId,
    pub parent: Option<ActivityId>,
    pub agents: BTreeSet<AgentId>,
    pub state: ActivityState,
    pub started_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ended_at: Option<u64>,
}

impl ActivityInstance {
    pub fn is_live(&self) -> bool {
        self.state == ActivityState::Live
    }
}

/// The context surrounding one activity instance: its resources, process,
/// attributes, and the agents involved. Created when the activity starts and
/// ended when it ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextInstance {
    pub id: ContextId,
    pub activity: ActivityId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_context: Option<ContextId>,
    pub generic_origin: GenericContextId,
    pub resources: BTreeMap<ResourceId, Resource>,
    pub process: ProcessTemplate,
    pub attributes: BTreeMap<String, String>,
    pub state: ContextState,
    pub agents_involved: BTreeSet<AgentId>,
}

impl ContextInstance {
    pub fn is_ended(&self) -> bool {
        self.state == ContextState::Ended
    }
}

/// The value a resolution query found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ResolvedValue {
    Resource { resource: Resource },
    Attribute { value: String },
}

/// A successful cascade lookup: the value, the context level that provided
/// it, and how many parent hops away that level is (0 = the queried context).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceResolution {
    pub key: String,
    pub value: ResolvedValue,
    pub provider: ContextId,
    pub depth: usize,
}

/// A value in a merged payload together with the context level it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provided<T> {
    pub value: T,
    pub provider: ContextId,
}

/// The union of all payloads along a cascade chain, inner levels shadowing
/// outer ones, each entry annotated with its providing level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EffectivePayload {
    pub resources: BTreeMap<ResourceId, Provided<Resource>>,
    pub attributes: BTreeMap<String, Provided<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<Provided<ProcessTemplate>>,
}

/// The full payload of one cascade level, self-contained for serialization
/// into publish envelopes and artifact snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextLevel {
    pub context: ContextId,
    pub activity: ActivityId,
    pub class: ClassId,
    pub generic_origin: GenericContextId,
    pub state: ContextState,
    pub agents_involved: BTreeSet<AgentId>,
    pub resources: BTreeMap<ResourceId, Resource>,
    pub attributes: BTreeMap<String, String>,
    pub process: ProcessTemplate,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CascadeError {
    #[error("unknown context: {0}")]
    UnknownContext(ContextId),
    #[error("context {0} has ended")]
    ContextEnded(ContextId),
    #[error("unknown activity: {0}")]
    UnknownActivity(ActivityId),
    #[error("parent context {0} has ended")]
    ParentEnded(ContextId),
    #[error("context {child} does not surround a child activity of context {parent}")]
    ParentMismatch { child: ContextId, parent: ContextId },
}

/// The forest of live and ended activity/context instances.
#[derive(Debug, Clone, Default)]
pub struct Cascade {
    activities: BTreeMap<ActivityId, ActivityInstance>,
    contexts: BTreeMap<ContextId, ContextInstance>,
    by_activity: BTreeMap<ActivityId, ContextId>,
}

impl Cascade {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_activity(&mut self, activity: ActivityInstance) {
        self.activities.insert(activity.id, activity);
    }

    /// Inserts a context and indexes it by its activity. Each activity has
    /// exactly one context.
    pub fn insert_context(&mut self, context: ContextInstance) {
        self.by_activity.insert(context.activity, context.id);
        self.contexts.insert(context.id, context);
    }

    pub fn activity(&self, id: ActivityId) -> Result<&ActivityInstance, CascadeError> {
        self.activities
            .get(&id)
            .ok_or(CascadeError::UnknownActivity(id))
    }

    pub fn activity_mut(&mut self, id: ActivityId) -> Result<&mut ActivityInstance, CascadeError> {
        self.activities
            .get_mut(&id)
            .ok_or(CascadeError::UnknownActivity(id))
    }

    pub fn context(&self, id: ContextId) -> Result<&ContextInstance, CascadeError> {
        self.contexts
            .get(&id)
            .ok_or(CascadeError::UnknownContext(id))
    }

    pub fn context_mut(&mut self, id: ContextId) -> Result<&mut ContextInstance, CascadeError> {
        self.contexts
            .get_mut(&id)
            .ok_or(CascadeError::UnknownContext(id))
    }

    pub fn context_of_activity(&self, id: ActivityId) -> Option<ContextId> {
        self.by_activity.get(&id).copied()
    }

    pub fn activities(&self) -> impl Iterator<Item = &ActivityInstance> {
        self.activities.values()
    }

    pub fn contexts(&self) -> impl Iterator<Item = &ContextInstance> {
        self.contexts.values()
    }

    /// Child contexts of `ctx`, in id order.
    pub fn children_of(&self, ctx: ContextId) -> Vec<ContextId> {
        self.contexts
            .values()
            .filter(|c| c.parent_context == Some(ctx))
            .map(|c| c.id)
            .collect()
    }

    /// Live child activities of `activity`.
    pub fn live_children_of_activity(&self, activity: ActivityId) -> Vec<ActivityId> {
        self.activities
            .values()
            .filter(|a| a.parent == Some(activity) && a.is_live())
            .map(|a| a.id)
            .collect()
    }

    /// Nests `child` under `parent`. The parent must not have ended and must
    /// surround the parent activity of the child's activity.
    pub fn attach(&mut self, child: ContextId, parent: ContextId) -> Result<(), CascadeError> {
        let parent_ctx = self.context(parent)?;
        if parent_ctx.is_ended() {
            return Err(CascadeError::ParentEnded(parent));
        }
        let parent_activity = parent_ctx.activity;
        let child_ctx = self.context(child)?;
        let child_activity = self.activity(child_ctx.activity)?;
        if child_activity.parent != Some(parent_activity) {
            return Err(CascadeError::ParentMismatch { child, parent });
        }
        self.context_mut(child)?.parent_context = Some(parent);
        Ok(())
    }

    /// The chain of context ids from `ctx` to the root, innermost first.
    pub fn chain(&self, ctx: ContextId) -> Result<Vec<ContextId>, CascadeError> {
        let mut out = Vec::new();
        let mut current = Some(ctx);
        while let Some(id) = current {
            let context = self.context(id)?;
            out.push(id);
            current = context.parent_context;
        }
        Ok(out)
    }

    /// Finds `key` at the nearest level walking from `ctx` to the root.
    /// Attribute keys match by exact name; resource queries match by resource
    /// id first, then by resource name. Returns `None` when no level provides
    /// the key.
    pub fn resolve(
        &self,
        ctx: ContextId,
        key: &str,
    ) -> Result<Option<ResourceResolution>, CascadeError> {
        let queried = self.context(ctx)?;
        if queried.is_ended() {
            return Err(CascadeError::ContextEnded(ctx));
        }
        for (depth, level_id) in self.chain(ctx)?.into_iter().enumerate() {
            let level = self.context(level_id)?;
            if let Some(value) = level.attributes.get(key) {
                return Ok(Some(ResourceResolution {
                    key: key.to_string(),
                    value: ResolvedValue::Attribute {
                        value: value.clone(),
                    },
                    provider: level_id,
                    depth,
                }));
            }
            let by_id = level.resources.get(&ResourceId::from(key));
            let found = by_id.or_else(|| level.resources.values().find(|r| r.name == key));
            if let Some(resource) = found {
                return Ok(Some(ResourceResolution {
                    key: key.to_string(),
                    value: ResolvedValue::Resource {
                        resource: resource.clone(),
                    },
                    provider: level_id,
                    depth,
                }));
            }
        }
        Ok(None)
    }

    /// Merges all ancestor payloads with inner levels shadowing outer levels
    /// per key/id; the process comes from the innermost level that defines a
    /// non-empty one.
    pub fn effective_context(&self, ctx: ContextId) -> Result<EffectivePayload, CascadeError> {
        let queried = self.context(ctx)?;
        if queried.is_ended() {
            return Err(CascadeError::ContextEnded(ctx));
        }
        let mut payload = EffectivePayload::default();
        for level_id in self.chain(ctx)? {
            let level = self.context(level_id)?;
            for (id, resource) in &level.resources {
                payload.resources.entry(id.clone()).or_insert(Provided {
                    value: resource.clone(),
                    provider: level_id,
                });
            }
            for (key, value) in &level.attributes {
                payload.attributes.entry(key.clone()).or_insert(Provided {
                    value: value.clone(),
                    provider: level_id,
                });
            }
            if payload.process.is_none() && !level.process.is_empty() {
                payload.process = Some(Provided {
                    value: level.process.clone(),
                    provider: level_id,
                });
            }
        }
        Ok(payload)
    }

    /// The activity surrounded by `ctx` plus all transitive descendant
    /// activities.
    pub fn influence_set(&self, ctx: ContextId) -> Result<BTreeSet<ActivityId>, CascadeError> {
        let root = self.context(ctx)?.activity;
        self.activity(root)?;
        let mut out = BTreeSet::new();
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if !out.insert(id) {
                continue;
            }
            stack.extend(
                self.activities
                    .values()
                    .filter(|a| a.parent == Some(id))
                    .map(|a| a.id),
            );
        }
        Ok(out)
    }

    /// Adds (or replaces, per id) a resource in a live or suspended context.
    pub fn add_resource(&mut self, ctx: ContextId, resource: Resource) -> Result<(), CascadeError> {
        let context = self.context_mut(ctx)?;
        if context.is_ended() {
            return Err(CascadeError::ContextEnded(ctx));
        }
        context.resources.insert(resource.id.clone(), resource);
        Ok(())
    }

    /// Sets an attribute in a live or suspended context.
    pub fn set_attribute(
        &mut self,
        ctx: ContextId,
        key: impl Into<String>,
        value: impl Into<String>,
    ) -> Result<(), CascadeError> {
        let context = self.context_mut(ctx)?;
        if context.is_ended() {
            return Err(CascadeError::ContextEnded(ctx));
        }
        context.attributes.insert(key.into(), value.into());
        Ok(())
    }

    /// The self-contained payload view of one level.
    pub fn level_view(&self, ctx: ContextId) -> Result<ContextLevel, CascadeError> {
        let context = self.context(ctx)?;
        let activity = self.activity(context.activity)?;
        Ok(ContextLevel {
            context: context.id,
            activity: activity.id,
            class: activity.class_id.clone(),
            generic_origin: context.generic_origin.clone(),
            state: context.state,
            agents_involved: context.agents_involved.clone(),
            resources: context.resources.clone(),
            attributes: context.attributes.clone(),
            process: context.process.clone(),
        })
    }

    /// Level views for the whole chain, innermost first.
    pub fn snapshot_chain(&self, ctx: ContextId) -> Result<Vec<ContextLevel>, CascadeError> {
        self.chain(ctx)?
            .into_iter()
            .map(|id| self.level_view(id))
            .collect()
    }
}
