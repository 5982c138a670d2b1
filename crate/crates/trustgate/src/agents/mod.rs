//! The five agent state machines plus the stub service provider.
//!
//! Every agent reacts only to [`AgentEvent`]s handed to it by the simulation
//! loop: delivered envelope bytes, its own timers, and (at the provider site)
//! co-located observation notes. Agents own their state exclusively and talk
//! to each other only through sealed envelopes.
//!
//! Incoming bytes pass through [`accept_envelope`]: strict decode plus seal
//! verification under the key provisioned for the sending link. Anything that
//! fails is dropped and logged against the sender in the agent's audit log;
//! it never reaches the agent's protocol logic.

mod csp;
mod dta;
mod interface;
mod mobile;
mod proxy;
mod tua;

pub use csp::CspService;
pub use dta::DomainTrustAgent;
pub use interface::{InterfaceAgent, SubmitError};
pub use mobile::{MaPhase, MobileAgentHost};
pub use proxy::{Credential, ProxyAgent};
pub use tua::TrustUserAgent;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::protocol::codec::{decode, encode_payload, open_received, RecvError};
use crate::protocol::seal::{seal, ChannelKey, SealTag};
use crate::protocol::{Envelope, EndpointId, Payload, RequestId};
use crate::simnet::{AgentEvent, Ctx, TimerKey};

/// Common agent interface driven by the harness world.
pub trait Agent {
    fn handle(&mut self, ctx: &mut Ctx, event: AgentEvent);
}

/// Channel keys provisioned to one agent, per directed endpoint pair.
#[derive(Debug, Clone, Default)]
pub struct Keyring {
    keys: BTreeMap<(EndpointId, EndpointId), ChannelKey>,
}

impl Keyring {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn provision(&mut self, from: EndpointId, to: EndpointId, key: ChannelKey) {
        self.keys.insert((from, to), key);
    }

    pub fn key_for(&self, from: &EndpointId, to: &EndpointId) -> Option<&ChannelKey> {
        self.keys.get(&(from.clone(), to.clone()))
    }

    /// Seals a payload for the given link; the link must be provisioned.
    pub fn sealed(&self, from: &EndpointId, to: &EndpointId, payload: &Payload) -> SealTag {
        let key = self
            .key_for(from, to)
            .unwrap_or_else(|| panic!("no channel key provisioned for {from} -> {to}"));
        seal(&encode_payload(payload), key)
    }
}

/// One line in an agent's audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub at: u64,
    pub agent: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub req_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    pub detail: String,
}

pub(crate) fn audit(
    log: &mut Vec<AuditEntry>,
    at: u64,
    agent: &EndpointId,
    kind: &str,
    req_id: Option<RequestId>,
    user: Option<&str>,
    detail: impl Into<String>,
) {
    log.push(AuditEntry {
        at,
        agent: agent.0.clone(),
        kind: kind.to_string(),
        req_id: req_id.map(|r| r.0),
        user: user.map(str::to_string),
        detail: detail.into(),
    });
}

/// Decodes and seal-verifies received bytes. A failure drops the envelope and
/// logs a wrong action against the sender in the receiving agent's audit log.
pub(crate) fn accept_envelope(
    keyring: &Keyring,
    bytes: &[u8],
    at: u64,
    agent: &EndpointId,
    log: &mut Vec<AuditEntry>,
) -> Option<Envelope> {
    let header = match decode(bytes) {
        Ok(env) => env,
        Err(e) => {
            audit(log, at, agent, "envelope_rejected", None, None, format!("malformed: {e}"));
            return None;
        }
    };
    let Some(key) = keyring.key_for(&header.from, &header.to) else {
        audit(
            log,
            at,
            agent,
            "envelope_rejected",
            Some(header.req_id),
            None,
            format!("no channel key for {} -> {}", header.from, header.to),
        );
        return None;
    };
    match open_received(bytes, key) {
        Ok(env) => Some(env),
        Err(RecvError::Seal(_)) => {
            audit(
                log,
                at,
                agent,
                "seal_violation",
                Some(header.req_id),
                None,
                format!("wrong action logged against sender {}", header.from),
            );
            None
        }
        Err(RecvError::Malformed(e)) => {
            audit(log, at, agent, "envelope_rejected", Some(header.req_id), None, e.to_string());
            None
        }
    }
}

// Timer key layout: kind in the top byte, a small generation counter next,
// the request id in the low 48 bits.
pub(crate) const TK_SUBMIT: u8 = 1;
pub(crate) const TK_INTERFACE_DEADLINE: u8 = 2;
pub(crate) const TK_PROXY_DEADLINE: u8 = 3;
pub(crate) const TK_MA_GATE: u8 = 4;
pub(crate) const TK_MA_SERVICE: u8 = 5;

pub(crate) fn timer_key(kind: u8, generation: u8, req: RequestId) -> TimerKey {
    debug_assert!(req.0 < (1 << 48));
    TimerKey(((kind as u64) << 56) | ((generation as u64) << 48) | req.0)
}

/// Timer key that fires a scheduled submission at an interface agent.
pub fn submit_timer_key(req: RequestId) -> TimerKey {
    timer_key(TK_SUBMIT, 0, req)
}

pub(crate) fn timer_parts(key: TimerKey) -> (u8, u8, RequestId) {
    ((key.0 >> 56) as u8, ((key.0 >> 48) & 0xFF) as u8, RequestId(key.0 & ((1 << 48) - 1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::PrincipalId;

    #[test]
    fn timer_key_roundtrip() {
        let key = timer_key(TK_MA_SERVICE, 7, RequestId(123_456));
        assert_eq!(timer_parts(key), (TK_MA_SERVICE, 7, RequestId(123_456)));
    }

    #[test]
    fn accept_rejects_unknown_channel() {
        let from = EndpointId::interface("u");
        let to = EndpointId::proxy("d");
        let payload = Payload::TrustQueryUser { principal: PrincipalId::new("u", "d") };
        let key = ChannelKey::derive(0, "x");
        let env = Envelope {
            seq: 0,
            req_id: RequestId(0),
            from,
            to,
            seal: seal(&encode_payload(&payload), &key),
            payload,
        };
        let bytes = crate::protocol::codec::encode(&env);
        let keyring = Keyring::new();
        let mut log = Vec::new();
        let got = accept_envelope(&keyring, &bytes, 0, &env.to, &mut log);
        assert!(got.is_none());
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].kind, "envelope_rejected");
    }
}
