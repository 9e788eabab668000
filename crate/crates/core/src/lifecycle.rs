//! Context lifetime and per-agent contextual focus. A context is created when
//! its activity starts and ends when the activity ends; an agent explicitly
//! focuses on exactly one context at a time while its other live contexts
//! stay suspended, waiting for the focus to return.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{
    ActivityId, ActivityInstance, ActivityState, Cascade, CascadeError, ContextId,
    ContextInstance, ContextState,
};
use crate::model::{
    self, AgentId, ClassId, ContextOverrides, ModelError, Ontology,
};

/// Which context an agent is explicitly engaged with, plus its suspended
/// contexts, most recently suspended first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocusState {
    pub agent: AgentId,
    pub focused: Option<ContextId>,
    pub suspended: Vec<ContextId>,
}

impl FocusState {
    fn new(agent: AgentId) -> Self {
        Self {
            agent,
            focused: None,
            suspended: Vec::new(),
        }
    }
}

/// How to end an activity that still has live children: refuse, or tear the
/// subtree down depth-first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EndMode {
    #[default]
    Strict,
    Cascade,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LifecycleError {
    #[error("unknown agent: {0}")]
    UnknownAgent(AgentId),
    #[error("activity class {0} has no generic context in its lineage")]
    NoGenericContext(ClassId),
    #[error("parent activity {0} has ended")]
    ParentEnded(ActivityId),
    #[error("activity {0} has already ended")]
    AlreadyEnded(ActivityId),
    #[error("activity {activity} has {live_children} live child activities")]
    LiveChildren {
        activity: ActivityId,
        live_children: usize,
    },
    #[error("context {context} has ended")]
    TargetEnded { context: ContextId },
    #[error("agent {agent} is not involved in context {context}")]
    NotInvolved { agent: AgentId, context: ContextId },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
}

/// Owns the ontology, the cascade, and every agent's focus state. All
/// mutations are serialized through one owner; reads hand out immutable
/// snapshots.
#[derive(Debug)]
pub struct Engine {
    ontology: Ontology,
    cascade: Cascade,
    focuses: BTreeMap<AgentId, FocusState>,
    next_activity: u64,
    next_context: u64,
    tick: u64,
}

impl Engine {
    pub fn new(ontology: Ontology) -> Self {
        Self {
            ontology,
            cascade: Cascade::new(),
            focuses: BTreeMap::new(),
            next_activity: 0,
            next_context: 0,
            tick: 0,
        }
    }

    pub fn ontology(&self) -> &Ontology {
        &self.ontology
    }

    /// Installs a new ontology version. The evolution path in the manager is
    /// the only caller; instances keep referencing their generic origins.
    pub fn swap_ontology(&mut self, ontology: Ontology) {
        self.ontology = ontology;
    }

    pub fn cascade(&self) -> &Cascade {
        &self.cascade
    }

    pub fn cascade_mut(&mut self) -> &mut Cascade {
        &mut self.cascade
    }

    pub fn set_tick(&mut self, tick: u64) {
        self.tick = tick;
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn focus_state(&self, agent: &AgentId) -> Option<&FocusState> {
        self.focuses.get(agent)
    }

    /// The focused context of `agent`, or none. Pure read.
    pub fn current_focus(&self, agent: &AgentId) -> Result<Option<ContextId>, LifecycleError> {
        if !self.ontology.agents.contains_key(agent) {
            return Err(LifecycleError::UnknownAgent(agent.clone()));
        }
        Ok(self.focuses.get(agent).and_then(|f| f.focused))
    }

    fn check_agent(&self, agent: &AgentId) -> Result<(), LifecycleError> {
        if self.ontology.agents.contains_key(agent) {
            Ok(())
        } else {
            Err(LifecycleError::UnknownAgent(agent.clone()))
        }
    }

    /// Starts a new activity of `class` for `agent`, optionally nested under
    /// a live parent activity. The context is specialized from the class's
    /// generic context (or the nearest ancestor class's), attached under the
    /// parent's context, and becomes the agent's focus; the previous focus is
    /// suspended.
    pub fn begin_activity(
        &mut self,
        agent: &AgentId,
        class: &ClassId,
        parent: Option<ActivityId>,
    ) -> Result<(ActivityId, ContextId), LifecycleError> {
        self.check_agent(agent)?;
        if !self.ontology.activity_classes.contains_key(class) {
            return Err(ModelError::UnknownClass(class.clone()).into());
        }
        let parent_context = match parent {
            Some(parent_id) => {
                let parent_activity = self.cascade.activity(parent_id)?;
                if !parent_activity.is_live() {
                    return Err(LifecycleError::ParentEnded(parent_id));
                }
                self.cascade.context_of_activity(parent_id)
            }
            None => None,
        };
        let generic_id = self
            .ontology
            .nearest_generic(class)
            .map(|g| g.id.clone())
            .ok_or_else(|| LifecycleError::NoGenericContext(class.clone()))?;

        self.next_activity += 1;
        self.next_context += 1;
        let activity_id = ActivityId(self.next_activity);
        let context_id = ContextId(self.next_context);

        let instance = ActivityInstance {
            id: activity_id,
            class_id: class.clone(),
            parent,
            agents: [agent.clone()].into(),
            state: ActivityState::Live,
            started_at: self.tick,
            ended_at: None,
        };
        let context = model::specialize(
            &self.ontology,
            &generic_id,
            &instance,
            &ContextOverrides::default(),
            context_id,
        )?;
        self.cascade.insert_activity(instance);
        self.cascade.insert_context(context);
        if let Some(parent_ctx) = parent_context {
            self.cascade.attach(context_id, parent_ctx)?;
        }
        self.set_focus(agent, context_id);
        Ok((activity_id, context_id))
    }

    /// Starts an activity of `class` with its whole ancestor chain: walks the
    /// class lineage root-first, reusing any live activity of an ancestor
    /// class that this agent already participates in and beginning the rest,
    /// so a single identification materializes the full cascade. Only the
    /// innermost context takes the agent's focus.
    pub fn begin_activity_chain(
        &mut self,
        agent: &AgentId,
        class: &ClassId,
    ) -> Result<(ActivityId, ContextId), LifecycleError> {
        self.check_agent(agent)?;
        let mut lineage = model::class_lineage(&self.ontology, class)?;
        lineage.reverse();

        let mut parent: Option<ActivityId> = None;
        let mut innermost: Option<(ActivityId, ContextId)> = None;
        for (position, step_class) in lineage.iter().enumerate() {
            let is_leaf = position + 1 == lineage.len();
            // Ancestors are shared; the target class always gets a fresh
            // performance.
            let existing = (!is_leaf)
                .then(|| {
                    self.cascade.activities().find(|a| {
                        a.is_live()
                            && &a.class_id == step_class
                            && a.agents.contains(agent)
                            && a.parent == parent
                    })
                })
                .flatten();
            let (activity_id, context_id) = match existing {
                Some(a) => {
                    let ctx = self
                        .cascade
                        .context_of_activity(a.id)
                        .expect("live activity always has a context");
                    (a.id, ctx)
                }
                None => self.begin_activity(agent, step_class, parent)?,
            };
            parent = Some(activity_id);
            innermost = Some((activity_id, context_id));
        }
        let (activity_id, context_id) = innermost.expect("lineage is never empty");
        if self.current_focus(agent)? != Some(context_id) {
            self.switch_focus(agent, context_id)?;
        }
        Ok((activity_id, context_id))
    }

    /// Moves the agent's focus to `target`. The previous focus is pushed to
    /// the front of the suspended list; the target leaves it. Switching to
    /// the current focus is a no-op.
    pub fn switch_focus(
        &mut self,
        agent: &AgentId,
        target: ContextId,
    ) -> Result<FocusState, LifecycleError> {
        self.check_agent(agent)?;
        let context = self.cascade.context(target)?;
        if context.is_ended() {
            return Err(LifecycleError::TargetEnded { context: target });
        }
        if !context.agents_involved.contains(agent) {
            return Err(LifecycleError::NotInvolved {
                agent: agent.clone(),
                context: target,
            });
        }
        if self.focuses.get(agent).and_then(|f| f.focused) != Some(target) {
            self.set_focus(agent, target);
        }
        Ok(self.focuses[agent].clone())
    }

    fn set_focus(&mut self, agent: &AgentId, target: ContextId) {
        let state = self
            .focuses
            .entry(agent.clone())
            .or_insert_with(|| FocusState::new(agent.clone()));
        let previous = state.focused.take();
        state.suspended.retain(|c| *c != target);
        if let Some(prev) = previous {
            if prev != target {
                state.suspended.insert(0, prev);
            }
        }
        state.focused = Some(target);
        self.refresh_context_state(target);
        if let Some(prev) = previous {
            self.refresh_context_state(prev);
        }
    }

    /// Recomputes active/suspended for a live context from the focus map.
    fn refresh_context_state(&mut self, ctx: ContextId) {
        let focused_somewhere = self.focuses.values().any(|f| f.focused == Some(ctx));
        if let Ok(context) = self.cascade.context_mut(ctx) {
            if context.state != ContextState::Ended {
                context.state = if focused_somewhere {
                    ContextState::Active
                } else {
                    ContextState::Suspended
                };
            }
        }
    }

    /// Ends an activity. Strict mode refuses while live children exist;
    /// cascade mode ends all descendants depth-first first. Ended contexts
    /// leave every agent's focus and suspended lists; a frozen snapshot of
    /// each ended context is returned, children first, for the caller's
    /// record store.
    pub fn end_activity(
        &mut self,
        activity: ActivityId,
        mode: EndMode,
    ) -> Result<Vec<ContextInstance>, LifecycleError> {
        let instance = self.cascade.activity(activity)?;
        if !instance.is_live() {
            return Err(LifecycleError::AlreadyEnded(activity));
        }
        let live_children = self.cascade.live_children_of_activity(activity);
        match mode {
            EndMode::Strict if !live_children.is_empty() => {
                return Err(LifecycleError::LiveChildren {
                    activity,
                    live_children: live_children.len(),
                });
            }
            _ => {}
        }

        let mut order = Vec::new();
        collect_post_order(&self.cascade, activity, &mut order);

        let mut snapshots = Vec::new();
        for id in order {
            let tick = self.tick;
            let act = self.cascade.activity_mut(id)?;
            act.state = ActivityState::Ended;
            act.ended_at = Some(tick);
            if let Some(ctx_id) = self.cascade.context_of_activity(id) {
                let ctx = self.cascade.context_mut(ctx_id)?;
                ctx.state = ContextState::Ended;
                let snapshot = ctx.clone();
                for focus in self.focuses.values_mut() {
                    if focus.focused == Some(ctx_id) {
                        focus.focused = None;
                    }
                    focus.suspended.retain(|c| *c != ctx_id);
                }
                snapshots.push(snapshot);
            }
        }
        Ok(snapshots)
    }

    /// Adds `agent` to a live activity and its shared context, then switches
    /// the agent's focus to that context. The context is never duplicated.
    pub fn join_activity(
        &mut self,
        agent: &AgentId,
        activity: ActivityId,
    ) -> Result<ContextId, LifecycleError> {
        self.check_agent(agent)?;
        let instance = self.cascade.activity(activity)?;
        if !instance.is_live() {
            return Err(LifecycleError::AlreadyEnded(activity));
        }
        let ctx_id = self
            .cascade
            .context_of_activity(activity)
            .expect("live activity always has a context");
        self.cascade.activity_mut(activity)?.agents.insert(agent.clone());
        self.cascade
            .context_mut(ctx_id)?
            .agents_involved
            .insert(agent.clone());
        self.switch_focus(agent, ctx_id)?;
        Ok(ctx_id)
    }
}

fn collect_post_order(cascade: &Cascade, activity: ActivityId, out: &mut Vec<ActivityId>) {
    let children: Vec<ActivityId> = cascade
        .activities()
        .filter(|a| a.parent == Some(activity) && a.is_live())
        .map(|a| a.id)
        .collect();
    for child in children {
        collect_post_order(cascade, child, out);
    }
    out.push(activity);
}
