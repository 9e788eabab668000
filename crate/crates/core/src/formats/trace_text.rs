//! Action-trace line format (`.trace`): one event per line,
//!
//! ```text
//! <timestamp> <agent-id> <action-token> [<target>] [k=v ...]
//! ```
//!
//! Timestamps are integer ticks so replays are deterministic; they must be
//! non-decreasing per agent. Blank lines and `#` comments are skipped.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::identify::ActionEvent;
use crate::model::AgentId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

/// Parses one trace line. Returns `Ok(None)` for blank lines and comments.
pub fn parse_trace_line(line: &str) -> Result<Option<ActionEvent>, String> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let mut fields = trimmed.split_whitespace();
    let timestamp = fields
        .next()
        .expect("non-blank line has a first field")
        .parse::<u64>()
        .map_err(|_| "timestamp must be a non-negative integer tick".to_string())?;
    let agent = fields.next().ok_or("missing agent id")?;
    let action = fields.next().ok_or("missing action token")?;

    let mut target = None;
    let mut attributes = BTreeMap::new();
    for field in fields {
        match field.split_once('=') {
            Some((key, value)) => {
                if key.is_empty() {
                    return Err(format!("attribute `{field}` has an empty key"));
                }
                attributes.insert(key.to_string(), value.to_string());
            }
            None => {
                if target.is_some() {
                    return Err(format!("unexpected bare field `{field}` after target"));
                }
                if !attributes.is_empty() {
                    return Err(format!("target `{field}` must precede attributes"));
                }
                target = Some(field.to_string());
            }
        }
    }

    Ok(Some(ActionEvent {
        timestamp,
        agent: AgentId::from(agent),
        action: action.to_string(),
        target,
        attributes,
    }))
}

/// Parses a whole trace, enforcing per-agent timestamp monotonicity.
pub fn parse_trace(text: &str) -> Result<Vec<ActionEvent>, TraceError> {
    let mut events = Vec::new();
    let mut last_seen: BTreeMap<AgentId, u64> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let event = parse_trace_line(line).map_err(|message| TraceError {
            line: line_no,
            message,
        })?;
        let Some(event) = event else { continue };
        if let Some(&last) = last_seen.get(&event.agent) {
            if event.timestamp < last {
                return Err(TraceError {
                    line: line_no,
                    message: format!(
                        "timestamp {} regresses below {} for agent {}",
                        event.timestamp, last, event.agent
                    ),
                });
            }
        }
        last_seen.insert(event.agent.clone(), event.timestamp);
        events.push(event);
    }
    Ok(events)
}

/// Renders events back into the line format, attributes in key order.
pub fn serialize_trace(events: &[ActionEvent]) -> String {
    let mut out = String::new();
    for event in events {
        out.push_str(&format!("{} {} {}", event.timestamp, event.agent, event.action));
        if let Some(target) = &event.target {
            out.push(' ');
            out.push_str(target);
        }
        for (key, value) in &event.attributes {
            out.push_str(&format!(" {key}={value}"));
        }
        out.push('\n');
    }
    out
}
