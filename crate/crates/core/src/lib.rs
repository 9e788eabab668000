//! Activity-centric context management engine.
//!
//! The engine models work as a hierarchy of activities, each surrounded by a
//! context that cascades down from broader activities (job, project, task) to
//! the specific one being performed. Contexts are specialized from generic,
//! a-priori modelled templates, identified at runtime from the agent's action
//! stream, published to subscribing applications, and evolved from recorded
//! behaviour.
//!
//! Module map:
//! - [`model`] — the static domain model (activity classes, generic contexts,
//!   resources, agents) and specialization.
//! - [`cascade`] — runtime nesting of activity/context instances and
//!   innermost-first resolution queries.
//! - [`lifecycle`] — context lifetime and per-agent contextual focus with
//!   suspension.
//! - [`identify`] — pattern-based activity identification, drift detection,
//!   and confirmation requests.
//! - [`manager`] — the Context Manager: the observe/identify/publish/record
//!   loop, subscriptions, suggestions, behaviour records, evolution, and
//!   artifact tagging.
//! - [`formats`] — the ontology file grammar, action-trace format, and the
//!   JSON-lines wire protocol.

pub mod cascade;
pub mod fixtures;
pub mod formats;
pub mod identify;
pub mod lifecycle;
pub mod manager;
pub mod model;
pub mod testkit;
