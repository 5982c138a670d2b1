//! Ordered log of every network event in a run, and its JSON-lines export.
//!
//! The export starts with one metadata line (`schema`, `max_time_exceeded`)
//! followed by one event object per line. Event lines always carry `seq`,
//! `event`, `msg_type`, `from`, `to`, and `req_id`; they additionally carry
//! `at` (simulated time), `env` (envelope send number), and, where the
//! message type warrants, `verdict`, `severity`, `stage`, `removal`, or
//! `tampered`. Traces are self-contained: conformance checking and trace
//! metrics can be recomputed from the export alone.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trust_core::ActionKind;

use super::{EndpointId, Envelope, MsgType, Payload, RejectStage, RequestId};

pub const TRACE_SCHEMA: &str = "trustgate-trace/1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceReadError {
    #[error("line {0}: {1}")]
    BadLine(usize, String),
    #[error("missing metadata header line")]
    MissingHeader,
    #[error("unsupported trace schema `{0}`")]
    BadSchema(String),
}

/// What happened to an envelope at the transport.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetEvent {
    Sent,
    Delivered,
    Dropped,
}

/// One network event; an envelope summary plus transport bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Trace position, strictly increasing.
    pub seq: u64,
    /// Simulated time of the event.
    pub at: u64,
    pub event: NetEvent,
    /// Send sequence number identifying the envelope across its events.
    pub env: u64,
    pub msg_type: MsgType,
    pub from: EndpointId,
    pub to: EndpointId,
    pub req_id: RequestId,
    /// Gate verdict, on `TrustReplyUser` / `DomainTrustReply`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<bool>,
    /// Reported action severity, on `BreachNotice`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<ActionKind>,
    /// Removal escalation flag, on `BreachNotice`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub removal: Option<bool>,
    /// Denial stage, on `Reject`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<RejectStage>,
    /// True when the fault injector corrupted this delivery in transit.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tampered: bool,
}

impl TraceEvent {
    pub fn summarize(seq: u64, at: u64, event: NetEvent, envelope: &Envelope, tampered: bool) -> Self {
        let (verdict, severity, removal, stage) = match &envelope.payload {
            Payload::TrustReplyUser { trusted, .. } | Payload::DomainTrustReply { trusted, .. } => {
                (Some(*trusted), None, None, None)
            }
            Payload::BreachNotice { severity, removal, .. } => {
                (None, Some(*severity), Some(*removal), None)
            }
            Payload::Reject { stage, .. } => (None, None, None, Some(*stage)),
            _ => (None, None, None, None),
        };
        TraceEvent {
            seq,
            at,
            event,
            env: envelope.seq,
            msg_type: envelope.msg_type(),
            from: envelope.from.clone(),
            to: envelope.to.clone(),
            req_id: envelope.req_id,
            verdict,
            severity,
            removal,
            stage,
            tampered,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceMeta {
    schema: String,
    max_time_exceeded: bool,
}

/// The complete event log of one simulation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    /// Set when the run hit its time budget before the event queue drained.
    pub max_time_exceeded: bool,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn delivered(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(|e| e.event == NetEvent::Delivered)
    }

    /// Request ids appearing in the trace, ascending.
    pub fn request_ids(&self) -> Vec<RequestId> {
        let mut ids: Vec<RequestId> = self.events.iter().map(|e| e.req_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Serializes to JSON lines: a metadata header then one event per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let meta = TraceMeta {
            schema: TRACE_SCHEMA.to_string(),
            max_time_exceeded: self.max_time_exceeded,
        };
        out.push_str(&serde_json::to_string(&meta).expect("meta serializes"));
        out.push('\n');
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses a JSON-lines export produced by [`Trace::to_jsonl`].
    pub fn from_jsonl(input: &str) -> Result<Self, TraceReadError> {
        let mut lines = input.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(TraceReadError::MissingHeader)?;
        let meta: TraceMeta = serde_json::from_str(header)
            .map_err(|e| TraceReadError::BadLine(1, e.to_string()))?;
        if meta.schema != TRACE_SCHEMA {
            return Err(TraceReadError::BadSchema(meta.schema));
        }
        let mut events = Vec::new();
        for (idx, line) in lines {
            let event: TraceEvent = serde_json::from_str(line)
                .map_err(|e| TraceReadError::BadLine(idx + 1, e.to_string()))?;
            events.push(event);
        }
        Ok(Trace { events, max_time_exceeded: meta.max_time_exceeded })
    }

    /// Structural invariants: trace seq strictly increasing, time monotone,
    /// and every delivery preceded by the matching send.
    pub fn invariants_hold(&self) -> bool {
        let seq_ok = self.events.windows(2).all(|w| w[0].seq < w[1].seq);
        let time_ok = self.events.windows(2).all(|w| w[0].at <= w[1].at);
        let mut sent = std::collections::BTreeSet::new();
        let causal_ok = self.events.iter().all(|e| match e.event {
            NetEvent::Sent => {
                sent.insert(e.env);
                true
            }
            NetEvent::Delivered | NetEvent::Dropped => sent.contains(&e.env),
        });
        seq_ok && time_ok && causal_ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::PrincipalId;

    fn event(seq: u64, at: u64, kind: NetEvent, env: u64) -> TraceEvent {
        TraceEvent {
            seq,
            at,
            event: kind,
            env,
            msg_type: MsgType::AuthSubmit,
            from: EndpointId::interface("u"),
            to: EndpointId::proxy("d"),
            req_id: RequestId(0),
            verdict: None,
            severity: None,
            removal: None,
            stage: None,
            tampered: false,
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let trace = Trace {
            events: vec![event(0, 0, NetEvent::Sent, 0), event(1, 1, NetEvent::Delivered, 0)],
            max_time_exceeded: false,
        };
        let text = trace.to_jsonl();
        assert_eq!(Trace::from_jsonl(&text).unwrap(), trace);
    }

    #[test]
    fn frozen_field_names_present() {
        let trace = Trace { events: vec![event(0, 0, NetEvent::Sent, 0)], max_time_exceeded: false };
        let text = trace.to_jsonl();
        let event_line = text.lines().nth(1).unwrap();
        for field in ["\"seq\"", "\"event\"", "\"msg_type\"", "\"from\"", "\"to\"", "\"req_id\""] {
            assert!(event_line.contains(field), "missing {field} in {event_line}");
        }
    }

    #[test]
    fn summarize_extracts_verdict() {
        let payload = Payload::TrustReplyUser {
            principal: PrincipalId::new("u", "d"),
            trusted: false,
        };
        let env = Envelope {
            seq: 9,
            req_id: RequestId(4),
            from: EndpointId::tua("d"),
            to: EndpointId::proxy("d"),
            seal: crate::protocol::seal::seal(b"", &crate::protocol::ChannelKey::derive(0, "t")),
            payload,
        };
        let ev = TraceEvent::summarize(0, 5, NetEvent::Delivered, &env, false);
        assert_eq!(ev.verdict, Some(false));
        assert_eq!(ev.msg_type, MsgType::TrustReplyUser);
    }

    #[test]
    fn causality_checked() {
        let good = Trace {
            events: vec![event(0, 0, NetEvent::Sent, 0), event(1, 2, NetEvent::Delivered, 0)],
            max_time_exceeded: false,
        };
        assert!(good.invariants_hold());
        let bad = Trace { events: vec![event(0, 0, NetEvent::Delivered, 7)], max_time_exceeded: false };
        assert!(!bad.invariants_hold());
    }

    #[test]
    fn bad_schema_rejected() {
        let text = "{\"schema\":\"other/9\",\"max_time_exceeded\":false}\n";
        assert!(matches!(Trace::from_jsonl(text), Err(TraceReadError::BadSchema(_))));
    }
}
