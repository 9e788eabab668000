//! Demo subscriber: a context-aware application that adapts a mock tool list
//! to the published context and answers confirmation requests from a script.

use std::io::{BufReader, Write};
use std::net::TcpStream;

use ctxcm_core::formats::{
    encode_envelope, ConfirmReplyBody, ConfirmRequestBody, Envelope, EnvelopeKind, EnvelopeReader,
    PublishBody, SubscribeBody, SuggestionBody,
};
use ctxcm_core::model::{AgentId, ResourceKind};

/// Which confirmation candidate the scripted subscriber picks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum ConfirmChoice {
    #[default]
    First,
    Second,
}

pub struct SubscriberOptions {
    pub app_id: String,
    pub agents: Vec<AgentId>,
    pub confirm_choice: ConfirmChoice,
}

/// Connects, subscribes, and prints everything received until the server
/// closes the connection. Returns an error on connection loss or protocol
/// violations.
pub fn run_subscriber(
    stream: TcpStream,
    options: &SubscriberOptions,
    out: &mut dyn Write,
) -> Result<(), String> {
    let mut writer = stream.try_clone().map_err(|e| e.to_string())?;
    let mut client_seq = 0u64;
    let mut send = |writer: &mut TcpStream, kind, body| -> Result<(), String> {
        client_seq += 1;
        let envelope = Envelope::new(kind, client_seq, body);
        writer
            .write_all(encode_envelope(&envelope).as_bytes())
            .map_err(|e| format!("connection lost: {e}"))
    };

    let subscribe = SubscribeBody {
        app_id: options.app_id.clone(),
        agents: options.agents.clone(),
    };
    send(
        &mut writer,
        EnvelopeKind::Subscribe,
        serde_json::to_value(&subscribe).expect("subscribe body serializes"),
    )?;

    let mut envelopes = EnvelopeReader::new(BufReader::new(stream));
    while let Some(result) = envelopes.next_envelope() {
        let envelope = result.map_err(|e| format!("protocol violation: {e}"))?;
        match envelope.kind {
            EnvelopeKind::Ack => {
                let _ = writeln!(out, "subscribed as {}", options.app_id);
            }
            EnvelopeKind::ContextPublish => {
                let body: PublishBody =
                    serde_json::from_value(envelope.body).map_err(|e| e.to_string())?;
                let _ = writeln!(out, "context for {} (focus {}):", body.agent, body.focus);
                for (depth, level) in body.hierarchy.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "  {}[{}] {} ({:?})",
                        "  ".repeat(depth),
                        level.context,
                        level.class,
                        level.state
                    );
                }
                let tools: Vec<&str> = body
                    .hierarchy
                    .first()
                    .map(|level| {
                        level
                            .resources
                            .values()
                            .filter(|r| r.kind == ResourceKind::Application)
                            .map(|r| r.name.as_str())
                            .collect()
                    })
                    .unwrap_or_default();
                let _ = writeln!(out, "  available tools: {}", tools.join(", "));
                if !body.global.is_empty() {
                    let globals: Vec<String> = body
                        .global
                        .iter()
                        .map(|(k, v)| format!("{k}={v}"))
                        .collect();
                    let _ = writeln!(out, "  global: {}", globals.join(" "));
                }
            }
            EnvelopeKind::Suggestion => {
                let body: SuggestionBody =
                    serde_json::from_value(envelope.body).map_err(|e| e.to_string())?;
                let _ = writeln!(out, "suggestion for {}: {}", body.agent, body.text);
            }
            EnvelopeKind::ConfirmRequest => {
                let body: ConfirmRequestBody =
                    serde_json::from_value(envelope.body).map_err(|e| e.to_string())?;
                let pick = match options.confirm_choice {
                    ConfirmChoice::First => 0,
                    ConfirmChoice::Second => 1,
                };
                let chosen = body
                    .candidates
                    .get(pick)
                    .or_else(|| body.candidates.first())
                    .ok_or("confirm request without candidates")?
                    .class
                    .clone();
                let _ = writeln!(
                    out,
                    "confirm request for {}: choosing {chosen}",
                    body.agent
                );
                let reply = ConfirmReplyBody {
                    agent: body.agent,
                    request_seq: envelope.seq,
                    request_id: body.request_id,
                    chosen,
                };
                send(
                    &mut writer,
                    EnvelopeKind::ConfirmReply,
                    serde_json::to_value(&reply).expect("reply body serializes"),
                )?;
            }
            EnvelopeKind::Error => {
                let _ = writeln!(out, "server error: {}", envelope.body);
            }
            other => {
                let _ = writeln!(out, "ignored {other} envelope");
            }
        }
    }
    Ok(())
}
