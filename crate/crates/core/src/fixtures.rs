//! Bundled workshop ontology and traces used by the scenario tests, the
//! acceptance suite, and the CLI examples.

use crate::formats;
use crate::identify::ActionEvent;
use crate::model::{ClassId, Ontology};

pub const WORKSHOP_ONTOLOGY: &str = include_str!("../../../fixtures/workshop.ctx");
pub const WORKSHOP_TRACE: &str = include_str!("../../../fixtures/workshop.trace");
pub const DEMO_RECRUITING_TRACE: &str = include_str!("../../../fixtures/demo_recruiting.trace");

/// Class id of the handheld demonstration workshop activity.
pub fn demo_workshop_class() -> ClassId {
    ClassId::from("organise-handheld-demo-workshop")
}

/// Class id of the recruiting workshop activity.
pub fn recruiting_workshop_class() -> ClassId {
    ClassId::from("organise-recruiting-workshop")
}

/// Class id of the top-level job activity.
pub fn job_class() -> ClassId {
    ClassId::from("work-as-a-researcher-within-dsto")
}

pub fn workshop_ontology() -> Ontology {
    formats::parse_ontology(WORKSHOP_ONTOLOGY).expect("bundled ontology parses")
}

pub fn workshop_trace() -> Vec<ActionEvent> {
    formats::parse_trace(WORKSHOP_TRACE).expect("bundled trace parses")
}

pub fn demo_recruiting_trace() -> Vec<ActionEvent> {
    formats::parse_trace(DEMO_RECRUITING_TRACE).expect("bundled trace parses")
}
