//! Wire protocol between the context manager and subscribing applications:
//! newline-delimited JSON envelopes `{kind, seq, body}` over a byte stream.
//! Sequence numbers are strictly 1..n per connection direction; unknown body
//! fields pass through untouched so older peers keep working.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::cascade::{ContextId, ContextLevel};
use crate::model::{AgentId, ClassId, ResourceId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeKind {
    Subscribe,
    ContextPublish,
    Suggestion,
    ConfirmRequest,
    ConfirmReply,
    Ack,
    Error,
}

impl EnvelopeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Subscribe => "subscribe",
            Self::ContextPublish => "context-publish",
            Self::Suggestion => "suggestion",
            Self::ConfirmRequest => "confirm-request",
            Self::ConfirmReply => "confirm-reply",
            Self::Ack => "ack",
            Self::Error => "error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "subscribe" => Some(Self::Subscribe),
            "context-publish" => Some(Self::ContextPublish),
            "suggestion" => Some(Self::Suggestion),
            "confirm-request" => Some(Self::ConfirmRequest),
            "confirm-reply" => Some(Self::ConfirmReply),
            "ack" => Some(Self::Ack),
            "error" => Some(Self::Error),
            _ => None,
        }
    }
}

impl std::fmt::Display for EnvelopeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One protocol message. `seq` increases strictly per connection direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Envelope {
    pub kind: EnvelopeKind,
    pub seq: u64,
    pub body: Value,
}

impl Envelope {
    pub fn new(kind: EnvelopeKind, seq: u64, body: Value) -> Self {
        Self { kind, seq, body }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("unknown envelope kind `{0}`")]
    UnknownKind(String),
    #[error("envelope seq {got} breaks the sequence (expected {expected})")]
    SeqGap { expected: u64, got: u64 },
    #[error("truncated envelope line")]
    Truncated,
}

/// Encodes an envelope as one JSON line, trailing newline included.
pub fn encode_envelope(envelope: &Envelope) -> String {
    let mut line = serde_json::to_string(envelope).expect("envelope serializes");
    line.push('\n');
    line
}

/// Decodes one JSON line into an envelope. The body is preserved verbatim,
/// unknown fields and all.
pub fn decode_envelope(line: &str) -> Result<Envelope, WireError> {
    let value: Value =
        serde_json::from_str(line.trim_end_matches('\n')).map_err(|e| WireError::Malformed(e.to_string()))?;
    let Value::Object(mut object) = value else {
        return Err(WireError::Malformed("envelope is not a JSON object".into()));
    };
    let kind = match object.get("kind") {
        Some(Value::String(s)) => {
            EnvelopeKind::parse(s).ok_or_else(|| WireError::UnknownKind(s.clone()))?
        }
        Some(_) => return Err(WireError::Malformed("`kind` is not a string".into())),
        None => return Err(WireError::Malformed("missing `kind`".into())),
    };
    let seq = match object.get("seq") {
        Some(Value::Number(n)) => n
            .as_u64()
            .ok_or_else(|| WireError::Malformed("`seq` is not a non-negative integer".into()))?,
        Some(_) => return Err(WireError::Malformed("`seq` is not an integer".into())),
        None => return Err(WireError::Malformed("missing `seq`".into())),
    };
    let body = object.remove("body").unwrap_or(Value::Null);
    Ok(Envelope { kind, seq, body })
}

/// Enforces per-connection delivery of seq values exactly 1..n with no gaps.
#[derive(Debug, Clone, Default)]
pub struct SeqTracker {
    last: u64,
}

impl SeqTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&mut self, seq: u64) -> Result<(), WireError> {
        let expected = self.last + 1;
        if seq != expected {
            return Err(WireError::SeqGap { expected, got: seq });
        }
        self.last = seq;
        Ok(())
    }

    pub fn last(&self) -> u64 {
        self.last
    }
}

/// Reads envelopes off a buffered byte stream, enforcing framing and sequence
/// order. A framing violation flags the connection: iteration ends after the
/// error is yielded.
pub struct EnvelopeReader<R> {
    reader: R,
    tracker: SeqTracker,
    poisoned: bool,
}

impl<R: BufRead> EnvelopeReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            reader,
            tracker: SeqTracker::new(),
            poisoned: false,
        }
    }

    /// Next envelope, `None` at clean end of stream.
    pub fn next_envelope(&mut self) -> Option<Result<Envelope, WireError>> {
        if self.poisoned {
            return None;
        }
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => None,
            Ok(_) => {
                if !line.ends_with('\n') {
                    self.poisoned = true;
                    return Some(Err(WireError::Truncated));
                }
                let result = decode_envelope(&line).and_then(|env| {
                    self.tracker.check(env.seq)?;
                    Ok(env)
                });
                if result.is_err() {
                    self.poisoned = true;
                }
                Some(result)
            }
            Err(e) => {
                self.poisoned = true;
                Some(Err(WireError::Malformed(e.to_string())))
            }
        }
    }
}

/// Body of a `subscribe` envelope. An empty agent list subscribes to all
/// agents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscribeBody {
    pub app_id: String,
    #[serde(default)]
    pub agents: Vec<AgentId>,
}

/// Body of a `context-publish` envelope: the agent's focus and the whole
/// cascade, innermost level first, plus global context information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishBody {
    pub agent: AgentId,
    pub focus: ContextId,
    pub hierarchy: Vec<ContextLevel>,
    pub global: BTreeMap<String, String>,
}

/// Body of a `suggestion` envelope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestionBody {
    pub agent: AgentId,
    pub text: String,
    pub basis: ContextId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offered_resource: Option<ResourceId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub class: ClassId,
    pub score: f64,
}

/// Body of a `confirm-request`: the two candidate classes of an ambiguous
/// identification. `request_id` identifies the request across connections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfirmRequestBody {
    pub agent: AgentId,
    pub request_id: u64,
    pub candidates: Vec<CandidateScore>,
}

/// Body of a `confirm-reply`: references the request's seq as delivered on
/// this connection plus its connection-independent id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfirmReplyBody {
    pub agent: AgentId,
    pub request_seq: u64,
    pub request_id: u64,
    pub chosen: ClassId,
}

/// Body of an `error` envelope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub message: String,
}
