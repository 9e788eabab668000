//! File and wire formats: the frame-style ontology grammar, the action-trace
//! line format, and the JSON-lines envelope protocol. Parsers are total --
//! any input is either parsed or rejected with a located error -- and every
//! format round-trips through its serializer.

mod ontology_text;
mod trace_text;
mod wire;

pub use ontology_text::{parse_ontology, serialize_ontology, ParseError};
pub use trace_text::{parse_trace, parse_trace_line, serialize_trace, TraceError};
pub use wire::{
    decode_envelope, encode_envelope, CandidateScore, ConfirmReplyBody, ConfirmRequestBody,
    Envelope, EnvelopeKind, EnvelopeReader, ErrorBody, PublishBody, SeqTracker, SubscribeBody,
    SuggestionBody, WireError,
};
