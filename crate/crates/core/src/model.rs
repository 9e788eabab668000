//! Static domain model: activity classes, generic contexts, resources,
//! agents, and the specialization step that derives a concrete context from a
//! generic template.
//!
//! An [`Ontology`] is modelled a priori for a domain and is immutable at
//! runtime; the only sanctioned mutation path is evolution in the manager
//! module, which produces a new `Ontology` value.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{ActivityInstance, ContextId, ContextInstance, ContextState};
use crate::identify::PatternSignature;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
        )]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Identifier of an [`ActivityClass`] within an ontology.
    ClassId
);
string_id!(
    /// Identifier of a [`GenericContext`] within an ontology.
    GenericContextId
);
string_id!(
    /// Identifier of a [`Resource`] within an ontology.
    ResourceId
);
string_id!(
    /// Identifier of an [`Agent`] within an ontology.
    AgentId
);

/// Lowercases a human-readable name into an identifier token: alphanumeric
/// runs joined by single hyphens. Used to derive class ids from names in the
/// ontology file grammar and to match process step names against observed
/// action tokens.
pub fn slug(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut pending_sep = false;
    for ch in name.chars() {
        if ch.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('-');
            }
            pending_sep = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

/// What a resource is: anything used to perform an activity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceKind {
    Information,
    Application,
    Person,
    Device,
    Other,
}

impl ResourceKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "information" => Some(Self::Information),
            "application" => Some(Self::Application),
            "person" => Some(Self::Person),
            "device" => Some(Self::Device),
            "other" => Some(Self::Other),
            _ => None,
        }
    }
}

impl std::fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Information => "information",
            Self::Application => "application",
            Self::Person => "person",
            Self::Device => "device",
            Self::Other => "other",
        };
        f.write_str(s)
    }
}

/// The performer of an activity: a person, a group, or a machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Person,
    Group,
    Machine,
}

impl AgentKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "person" => Some(Self::Person),
            "group" => Some(Self::Group),
            "machine" => Some(Self::Machine),
            _ => None,
        }
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Person => "person",
            Self::Group => "group",
            Self::Machine => "machine",
        };
        f.write_str(s)
    }
}

/// Anything used to perform an activity: information, applications, people,
/// devices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resource {
    pub id: ResourceId,
    pub kind: ResourceKind,
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

impl Resource {
    pub fn new(id: impl Into<ResourceId>, kind: ResourceKind, name: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            name: name.into(),
            attributes: BTreeMap::new(),
        }
    }
}

/// An agent that performs activities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Agent {
    pub id: AgentId,
    pub kind: AgentKind,
    pub name: String,
}

/// One step of a process: either a named atomic action or a conditional
/// branch guarded by an opaque condition name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Step {
    Atomic { name: String },
    Conditional {
        condition: String,
        negated: bool,
        then_steps: Vec<Step>,
    },
}

impl Step {
    pub fn atomic(name: impl Into<String>) -> Self {
        Step::Atomic { name: name.into() }
    }
}

/// The ordered, possibly conditional steps by which an activity is performed.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessTemplate {
    pub steps: Vec<Step>,
}

impl ProcessTemplate {
    pub fn new(steps: Vec<Step>) -> Self {
        Self { steps }
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The atomic step names in depth-first order, descending into
    /// conditional branches (conditions are opaque and never evaluated).
    pub fn atomic_steps(&self) -> Vec<&str> {
        fn walk<'a>(steps: &'a [Step], out: &mut Vec<&'a str>) {
            for step in steps {
                match step {
                    Step::Atomic { name } => out.push(name),
                    Step::Conditional { then_steps, .. } => walk(then_steps, out),
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.steps, &mut out);
        out
    }
}

/// A generic type of activity that can be modelled a priori for a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityClass {
    pub id: ClassId,
    pub name: String,
    pub parent_class: Option<ClassId>,
    pub signature: PatternSignature,
    pub description: String,
}

/// The template context surrounding a class of activities, from which the
/// context of a specific performance is specialized.
#[derive(Debug, Clone, PartialEq)]
pub struct GenericContext {
    pub id: GenericContextId,
    pub for_class: ClassId,
    pub resources: BTreeSet<ResourceId>,
    pub process: ProcessTemplate,
    pub attributes: BTreeMap<String, String>,
}

/// The a-priori domain model: activity classes, their generic contexts, and
/// the resources and agents they reference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ontology {
    pub activity_classes: BTreeMap<ClassId, ActivityClass>,
    pub generic_contexts: BTreeMap<GenericContextId, GenericContext>,
    pub resources: BTreeMap<ResourceId, Resource>,
    pub agents: BTreeMap<AgentId, Agent>,
}

impl Ontology {
    pub fn insert_class(&mut self, class: ActivityClass) {
        self.activity_classes.insert(class.id.clone(), class);
    }

    pub fn insert_generic(&mut self, generic: GenericContext) {
        self.generic_contexts.insert(generic.id.clone(), generic);
    }

    pub fn insert_resource(&mut self, resource: Resource) {
        self.resources.insert(resource.id.clone(), resource);
    }

    pub fn insert_agent(&mut self, agent: Agent) {
        self.agents.insert(agent.id.clone(), agent);
    }

    /// The generic context declared for exactly this class, if any.
    pub fn generic_for_class(&self, class: &ClassId) -> Option<&GenericContext> {
        self.generic_contexts
            .values()
            .find(|g| &g.for_class == class)
    }

    /// The generic context of the class itself or, failing that, of the
    /// nearest ancestor class that declares one.
    pub fn nearest_generic(&self, class: &ClassId) -> Option<&GenericContext> {
        let lineage = class_lineage(self, class).ok()?;
        lineage.iter().find_map(|c| self.generic_for_class(c))
    }
}

/// A broken ontology invariant, naming the offending id and the rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject: String,
    pub rule: &'static str,
    pub message: String,
}

impl Violation {
    fn new(subject: impl Into<String>, rule: &'static str, message: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            rule,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}({}): {}", self.rule, self.subject, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("unknown activity class: {0}")]
    UnknownClass(ClassId),
    #[error("unknown generic context: {0}")]
    UnknownGenericContext(GenericContextId),
    #[error("activity class {instance_class} is not {for_class} or a descendant of it")]
    ClassMismatch {
        instance_class: ClassId,
        for_class: ClassId,
    },
    #[error("activity class hierarchy contains a cycle through {0}")]
    CyclicHierarchy(ClassId),
}

/// Checks every ontology invariant and reports violations as data. An empty
/// report means the ontology is valid.
pub fn validate_ontology(ontology: &Ontology) -> Vec<Violation> {
    let mut out = Vec::new();

    for (id, class) in &ontology.activity_classes {
        if let Some(parent) = &class.parent_class {
            if !ontology.activity_classes.contains_key(parent) {
                out.push(Violation::new(
                    id.as_str(),
                    "dangling-parent",
                    format!("parent class {parent} does not exist"),
                ));
            }
        }
        if detect_cycle(ontology, id) {
            out.push(Violation::new(
                id.as_str(),
                "class-cycle",
                "parent chain does not terminate at a root class",
            ));
        }
        if class.signature.weighted_tokens.is_empty() {
            out.push(Violation::new(
                id.as_str(),
                "empty-signature",
                "pattern signature has no tokens",
            ));
        }
        for (token, weight) in &class.signature.weighted_tokens {
            if *weight <= 0.0 || !weight.is_finite() {
                out.push(Violation::new(
                    id.as_str(),
                    "nonpositive-weight",
                    format!("signature token {token} has weight {weight}"),
                ));
            }
        }
        if !(0.0..=1.0).contains(&class.signature.min_score) {
            out.push(Violation::new(
                id.as_str(),
                "min-score-range",
                format!("min-score {} outside [0, 1]", class.signature.min_score),
            ));
        }
    }

    let mut seen_for_class: BTreeMap<&ClassId, &GenericContextId> = BTreeMap::new();
    for (id, generic) in &ontology.generic_contexts {
        if !ontology.activity_classes.contains_key(&generic.for_class) {
            out.push(Violation::new(
                id.as_str(),
                "dangling-for-class",
                format!("activity class {} does not exist", generic.for_class),
            ));
        }
        if let Some(first) = seen_for_class.insert(&generic.for_class, id) {
            out.push(Violation::new(
                id.as_str(),
                "duplicate-generic-context",
                format!(
                    "class {} already has generic context {first}",
                    generic.for_class
                ),
            ));
        }
        for resource in &generic.resources {
            if !ontology.resources.contains_key(resource) {
                out.push(Violation::new(
                    id.as_str(),
                    "dangling-resource",
                    format!("resource {resource} does not exist"),
                ));
            }
        }
        check_steps(id.as_str(), &generic.process.steps, &mut out);
    }

    out
}

fn check_steps(subject: &str, steps: &[Step], out: &mut Vec<Violation>) {
    for step in steps {
        match step {
            Step::Atomic { name } => {
                if name.is_empty() {
                    out.push(Violation::new(
                        subject,
                        "empty-step-name",
                        "atomic step with empty name",
                    ));
                }
            }
            Step::Conditional {
                condition,
                then_steps,
                ..
            } => {
                if condition.is_empty() {
                    out.push(Violation::new(
                        subject,
                        "empty-step-name",
                        "conditional step with empty condition",
                    ));
                }
                check_steps(subject, then_steps, out);
            }
        }
    }
}

fn detect_cycle(ontology: &Ontology, start: &ClassId) -> bool {
    let mut seen = BTreeSet::new();
    let mut current = Some(start.clone());
    while let Some(id) = current {
        if !seen.insert(id.clone()) {
            return true;
        }
        current = ontology
            .activity_classes
            .get(&id)
            .and_then(|c| c.parent_class.clone());
    }
    false
}

/// The class and every ancestor, child first, ending at the root.
pub fn class_lineage(ontology: &Ontology, class: &ClassId) -> Result<Vec<ClassId>, ModelError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut current = Some(class.clone());
    while let Some(id) = current {
        if !seen.insert(id.clone()) {
            return Err(ModelError::CyclicHierarchy(id));
        }
        let class = ontology
            .activity_classes
            .get(&id)
            .ok_or_else(|| ModelError::UnknownClass(id.clone()))?;
        out.push(id);
        current = class.parent_class.clone();
    }
    Ok(out)
}

/// Per-key overrides applied on top of a generic context during
/// specialization. Override resources replace same-id entries and union with
/// the rest; attribute overrides win per key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextOverrides {
    pub resources: Vec<Resource>,
    pub attributes: BTreeMap<String, String>,
    pub process: Option<ProcessTemplate>,
}

impl ContextOverrides {
    pub fn is_empty(&self) -> bool {
        self.resources.is_empty() && self.attributes.is_empty() && self.process.is_none()
    }
}

/// Derives a concrete context for `instance` from a generic context: copies
/// the generic payload, applies `overrides`, and records the generic origin.
///
/// The instance's class must equal the generic's class or descend from it.
pub fn specialize(
    ontology: &Ontology,
    generic_id: &GenericContextId,
    instance: &ActivityInstance,
    overrides: &ContextOverrides,
    new_id: ContextId,
) -> Result<ContextInstance, ModelError> {
    let generic = ontology
        .generic_contexts
        .get(generic_id)
        .ok_or_else(|| ModelError::UnknownGenericContext(generic_id.clone()))?;

    let lineage = class_lineage(ontology, &instance.class_id)?;
    if !lineage.contains(&generic.for_class) {
        return Err(ModelError::ClassMismatch {
            instance_class: instance.class_id.clone(),
            for_class: generic.for_class.clone(),
        });
    }

    let mut resources: BTreeMap<ResourceId, Resource> = generic
        .resources
        .iter()
        .filter_map(|id| ontology.resources.get(id).cloned())
        .map(|r| (r.id.clone(), r))
        .collect();
    for resource in &overrides.resources {
        resources.insert(resource.id.clone(), resource.clone());
    }

    let mut attributes = generic.attributes.clone();
    for (key, value) in &overrides.attributes {
        attributes.insert(key.clone(), value.clone());
    }

    let process = overrides
        .process
        .clone()
        .unwrap_or_else(|| generic.process.clone());

    Ok(ContextInstance {
        id: new_id,
        activity: instance.id,
        parent_context: None,
        generic_origin: generic.id.clone(),
        resources,
        process,
        attributes,
        state: ContextState::Active,
        agents_involved: instance.agents.clone(),
    })
}
