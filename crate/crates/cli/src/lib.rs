//! Command-line harness for the activity-centric context manager: ontology
//! validation, deterministic trace replay, state queries, evolution runs, a
//! network service, and a demo subscriber application.

pub mod query;
pub mod replay;
pub mod service;
pub mod subscriber;
