//! Canonical wire encoding for envelopes.
//!
//! Length-prefixed binary with a fixed field order, frozen by golden-file
//! tests:
//!
//! ```text
//! seq        u64 LE
//! req_id     u64 LE
//! from       u32 LE length + UTF-8
//! to         u32 LE length + UTF-8
//! payload    u32 LE length + payload bytes
//! seal       32 raw bytes
//! ```
//!
//! The payload region starts with a `u8` message-type tag followed by the
//! variant's fields in declaration order. Decoding is strict: unknown tags,
//! truncation, and trailing bytes are all `MalformedEnvelope`, so the
//! encoding is canonical — equal envelopes produce identical bytes and every
//! valid byte string has exactly one parse.

use std::ops::Range;

use thiserror::Error;

use crate::bytesio::{ReadError, Reader, Writer};
use crate::trust_core::ActionKind;

use super::seal::{open, ChannelKey, SealTag, SealViolation};
use super::{Envelope, EndpointId, MobileAgentState, Payload, PrincipalId, RejectStage, RequestId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed envelope: {0}")]
pub struct WireError(pub String);

impl From<ReadError> for WireError {
    fn from(e: ReadError) -> Self {
        WireError(e.to_string())
    }
}

/// Why a received byte string was not dispatched to the agent.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecvError {
    #[error(transparent)]
    Malformed(#[from] WireError),
    #[error(transparent)]
    Seal(#[from] SealViolation),
}

const TAG_AUTH_SUBMIT: u8 = 0;
const TAG_AUTH_RESULT: u8 = 1;
const TAG_TRUST_QUERY_USER: u8 = 2;
const TAG_TRUST_REPLY_USER: u8 = 3;
const TAG_MIGRATE_OUT: u8 = 4;
const TAG_DOMAIN_TRUST_QUERY: u8 = 5;
const TAG_DOMAIN_TRUST_REPLY: u8 = 6;
const TAG_SERVICE_CALL: u8 = 7;
const TAG_SERVICE_RESULT: u8 = 8;
const TAG_MIGRATE_BACK: u8 = 9;
const TAG_BREACH_NOTICE: u8 = 10;
const TAG_DELIVER_RESULT: u8 = 11;
const TAG_REJECT: u8 = 12;

fn put_principal(w: &mut Writer, p: &PrincipalId) {
    w.put_str(&p.user);
    w.put_str(&p.domain);
}

fn get_principal(r: &mut Reader) -> Result<PrincipalId, WireError> {
    Ok(PrincipalId { user: r.get_str()?, domain: r.get_str()? })
}

fn put_agent(w: &mut Writer, a: &MobileAgentState) {
    put_principal(w, &a.principal);
    w.put_str(&a.request);
    match &a.response {
        None => w.put_u8(0),
        Some(resp) => {
            w.put_u8(1);
            w.put_str(resp);
        }
    }
    w.put_str(&a.origin.0);
}

fn get_agent(r: &mut Reader) -> Result<MobileAgentState, WireError> {
    let principal = get_principal(r)?;
    let request = r.get_str()?;
    let response = match r.get_u8()? {
        0 => None,
        1 => Some(r.get_str()?),
        tag => return Err(WireError(format!("invalid option tag {tag}"))),
    };
    let origin = EndpointId(r.get_str()?);
    Ok(MobileAgentState { principal, request, response, origin })
}

fn put_kind(w: &mut Writer, k: ActionKind) {
    w.put_u8(match k {
        ActionKind::Positive => 0,
        ActionKind::Wrong => 1,
        ActionKind::Malicious => 2,
    });
}

fn get_kind(r: &mut Reader) -> Result<ActionKind, WireError> {
    match r.get_u8()? {
        0 => Ok(ActionKind::Positive),
        1 => Ok(ActionKind::Wrong),
        2 => Ok(ActionKind::Malicious),
        tag => Err(WireError(format!("invalid action kind tag {tag}"))),
    }
}

fn put_stage(w: &mut Writer, s: RejectStage) {
    w.put_u8(match s {
        RejectStage::Auth => 0,
        RejectStage::UserGate => 1,
        RejectStage::DomainGate => 2,
        RejectStage::Timeout => 3,
        RejectStage::Removed => 4,
    });
}

fn get_stage(r: &mut Reader) -> Result<RejectStage, WireError> {
    match r.get_u8()? {
        0 => Ok(RejectStage::Auth),
        1 => Ok(RejectStage::UserGate),
        2 => Ok(RejectStage::DomainGate),
        3 => Ok(RejectStage::Timeout),
        4 => Ok(RejectStage::Removed),
        tag => Err(WireError(format!("invalid reject stage tag {tag}"))),
    }
}

/// Canonical payload bytes: type tag plus fields in declaration order.
pub fn encode_payload(payload: &Payload) -> Vec<u8> {
    let mut w = Writer::new();
    match payload {
        Payload::AuthSubmit { principal, secret, request } => {
            w.put_u8(TAG_AUTH_SUBMIT);
            put_principal(&mut w, principal);
            w.put_str(secret);
            w.put_str(request);
        }
        Payload::AuthResult { principal, session } => {
            w.put_u8(TAG_AUTH_RESULT);
            put_principal(&mut w, principal);
            w.put_u64(*session);
        }
        Payload::TrustQueryUser { principal } => {
            w.put_u8(TAG_TRUST_QUERY_USER);
            put_principal(&mut w, principal);
        }
        Payload::TrustReplyUser { principal, trusted } => {
            w.put_u8(TAG_TRUST_REPLY_USER);
            put_principal(&mut w, principal);
            w.put_bool(*trusted);
        }
        Payload::MigrateOut { agent } => {
            w.put_u8(TAG_MIGRATE_OUT);
            put_agent(&mut w, agent);
        }
        Payload::DomainTrustQuery { principal } => {
            w.put_u8(TAG_DOMAIN_TRUST_QUERY);
            put_principal(&mut w, principal);
        }
        Payload::DomainTrustReply { principal, trusted } => {
            w.put_u8(TAG_DOMAIN_TRUST_REPLY);
            put_principal(&mut w, principal);
            w.put_bool(*trusted);
        }
        Payload::ServiceCall { principal, request } => {
            w.put_u8(TAG_SERVICE_CALL);
            put_principal(&mut w, principal);
            w.put_str(request);
        }
        Payload::ServiceResult { principal, response } => {
            w.put_u8(TAG_SERVICE_RESULT);
            put_principal(&mut w, principal);
            w.put_str(response);
        }
        Payload::MigrateBack { agent } => {
            w.put_u8(TAG_MIGRATE_BACK);
            put_agent(&mut w, agent);
        }
        Payload::BreachNotice { principal, severity, removal } => {
            w.put_u8(TAG_BREACH_NOTICE);
            put_principal(&mut w, principal);
            put_kind(&mut w, *severity);
            w.put_bool(*removal);
        }
        Payload::DeliverResult { principal, response } => {
            w.put_u8(TAG_DELIVER_RESULT);
            put_principal(&mut w, principal);
            w.put_str(response);
        }
        Payload::Reject { principal, stage } => {
            w.put_u8(TAG_REJECT);
            put_principal(&mut w, principal);
            put_stage(&mut w, *stage);
        }
    }
    w.into_bytes()
}

fn decode_payload(bytes: &[u8]) -> Result<Payload, WireError> {
    let mut r = Reader::new(bytes);
    let payload = match r.get_u8()? {
        TAG_AUTH_SUBMIT => Payload::AuthSubmit {
            principal: get_principal(&mut r)?,
            secret: r.get_str()?,
            request: r.get_str()?,
        },
        TAG_AUTH_RESULT => {
            Payload::AuthResult { principal: get_principal(&mut r)?, session: r.get_u64()? }
        }
        TAG_TRUST_QUERY_USER => Payload::TrustQueryUser { principal: get_principal(&mut r)? },
        TAG_TRUST_REPLY_USER => Payload::TrustReplyUser {
            principal: get_principal(&mut r)?,
            trusted: r.get_bool()?,
        },
        TAG_MIGRATE_OUT => Payload::MigrateOut { agent: get_agent(&mut r)? },
        TAG_DOMAIN_TRUST_QUERY => Payload::DomainTrustQuery { principal: get_principal(&mut r)? },
        TAG_DOMAIN_TRUST_REPLY => Payload::DomainTrustReply {
            principal: get_principal(&mut r)?,
            trusted: r.get_bool()?,
        },
        TAG_SERVICE_CALL => Payload::ServiceCall {
            principal: get_principal(&mut r)?,
            request: r.get_str()?,
        },
        TAG_SERVICE_RESULT => Payload::ServiceResult {
            principal: get_principal(&mut r)?,
            response: r.get_str()?,
        },
        TAG_MIGRATE_BACK => Payload::MigrateBack { agent: get_agent(&mut r)? },
        TAG_BREACH_NOTICE => Payload::BreachNotice {
            principal: get_principal(&mut r)?,
            severity: get_kind(&mut r)?,
            removal: r.get_bool()?,
        },
        TAG_DELIVER_RESULT => Payload::DeliverResult {
            principal: get_principal(&mut r)?,
            response: r.get_str()?,
        },
        TAG_REJECT => Payload::Reject {
            principal: get_principal(&mut r)?,
            stage: get_stage(&mut r)?,
        },
        tag => return Err(WireError(format!("unknown message type tag {tag}"))),
    };
    r.finish()?;
    Ok(payload)
}

/// Encodes a whole envelope into its canonical byte string.
pub fn encode(env: &Envelope) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_u64(env.seq);
    w.put_u64(env.req_id.0);
    w.put_str(&env.from.0);
    w.put_str(&env.to.0);
    w.put_bytes(&encode_payload(&env.payload));
    w.put_raw(&env.seal.0);
    w.into_bytes()
}

/// Strict inverse of [`encode`].
pub fn decode(bytes: &[u8]) -> Result<Envelope, WireError> {
    let (env, _) = decode_with_region(bytes)?;
    Ok(env)
}

fn decode_with_region(bytes: &[u8]) -> Result<(Envelope, Range<usize>), WireError> {
    let mut r = Reader::new(bytes);
    let seq = r.get_u64()?;
    let req_id = RequestId(r.get_u64()?);
    let from = EndpointId(r.get_str()?);
    let to = EndpointId(r.get_str()?);
    let payload_len = r.get_u32()? as usize;
    let payload_start = r.pos();
    let payload_bytes = r.get_raw(payload_len).map_err(WireError::from)?;
    let payload = decode_payload(payload_bytes)?;
    let seal = SealTag(
        r.get_raw(32)
            .map_err(WireError::from)?
            .try_into()
            .expect("exactly 32 bytes"),
    );
    r.finish()?;
    Ok((Envelope { seq, req_id, from, to, payload, seal }, payload_start..payload_start + payload_len))
}

/// Byte range holding the payload (tag + fields) inside an encoded envelope.
/// The fault injector flips bytes only inside this region.
pub fn payload_region(bytes: &[u8]) -> Result<Range<usize>, WireError> {
    let mut r = Reader::new(bytes);
    r.get_u64()?; // seq
    r.get_u64()?; // req_id
    r.get_str()?; // from
    r.get_str()?; // to
    let payload_len = r.get_u32()? as usize;
    let start = r.pos();
    if payload_len + 32 != r.remaining() {
        return Err(WireError("payload length does not match frame".into()));
    }
    Ok(start..start + payload_len)
}

/// Receiving path used by every agent: strict decode, then seal verification
/// over the received payload bytes under the expected channel key.
pub fn open_received(bytes: &[u8], key: &ChannelKey) -> Result<Envelope, RecvError> {
    let (env, region) = decode_with_region(bytes)?;
    open(&bytes[region], &env.seal, key)?;
    Ok(env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::seal::seal;

    fn sample_envelope() -> Envelope {
        let payload = Payload::AuthSubmit {
            principal: PrincipalId::new("alice", "subsidiary-a"),
            secret: "hunter2".into(),
            request: "get-report".into(),
        };
        let key = ChannelKey::derive(1, "interface/alice->proxy/subsidiary-a");
        let tag = seal(&encode_payload(&payload), &key);
        Envelope {
            seq: 1,
            req_id: RequestId(0),
            from: EndpointId::interface("alice"),
            to: EndpointId::proxy("subsidiary-a"),
            payload,
            seal: tag,
        }
    }

    #[test]
    fn roundtrip_identity() {
        let env = sample_envelope();
        assert_eq!(decode(&encode(&env)).unwrap(), env);
    }

    #[test]
    fn equal_envelopes_encode_identically() {
        assert_eq!(encode(&sample_envelope()), encode(&sample_envelope()));
    }

    #[test]
    fn open_received_accepts_well_sealed() {
        let env = sample_envelope();
        let key = ChannelKey::derive(1, "interface/alice->proxy/subsidiary-a");
        let got = open_received(&encode(&env), &key).unwrap();
        assert_eq!(got, env);
    }

    #[test]
    fn flipped_payload_byte_fails_seal() {
        let env = sample_envelope();
        let key = ChannelKey::derive(1, "interface/alice->proxy/subsidiary-a");
        let mut bytes = encode(&env);
        let region = payload_region(&bytes).unwrap();
        bytes[region.start + 3] ^= 0xA5;
        match open_received(&bytes, &key) {
            Err(RecvError::Seal(_)) | Err(RecvError::Malformed(_)) => {}
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn wrong_key_fails_seal() {
        let env = sample_envelope();
        let key = ChannelKey::derive(1, "some-other-link");
        assert!(matches!(open_received(&encode(&env), &key), Err(RecvError::Seal(_))));
    }

    #[test]
    fn truncated_frame_is_malformed() {
        let bytes = encode(&sample_envelope());
        assert!(decode(&bytes[..bytes.len() - 5]).is_err());
    }

    #[test]
    fn trailing_bytes_are_malformed() {
        let mut bytes = encode(&sample_envelope());
        bytes.push(0);
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn unknown_payload_tag_is_malformed() {
        let env = sample_envelope();
        let mut bytes = encode(&env);
        let region = payload_region(&bytes).unwrap();
        bytes[region.start] = 0xEE;
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn payload_region_matches_payload_bytes() {
        let env = sample_envelope();
        let bytes = encode(&env);
        let region = payload_region(&bytes).unwrap();
        assert_eq!(&bytes[region], encode_payload(&env.payload).as_slice());
    }
}
