//! Message schema, canonical wire codec, sealed-channel integrity, network
//! traces, and the sequence conformance checker.
//!
//! An [`Envelope`] is the unit of communication: a typed payload, the two
//! endpoint ids, a request lifecycle id, a global send sequence number, and
//! an integrity seal over the canonical payload bytes. The payload variant
//! determines the message type exactly; there is no way to build a mismatched
//! pair.

pub mod codec;
pub mod conformance;
pub mod seal;
pub mod trace;

pub use codec::{decode, encode, open_received, payload_region, RecvError, WireError};
pub use conformance::{check_conformance, ConformanceReport, Verdict};
pub use seal::{open, seal, ChannelKey, SealTag, SealViolation};
pub use trace::{NetEvent, Trace, TraceEvent, TraceReadError};

use serde::{Deserialize, Serialize};

use crate::trust_core::ActionKind;

/// Who a request is about: a user together with the domain it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PrincipalId {
    pub user: String,
    pub domain: String,
}

impl PrincipalId {
    pub fn new(user: impl Into<String>, domain: impl Into<String>) -> Self {
        PrincipalId { user: user.into(), domain: domain.into() }
    }

    pub fn is_valid(&self) -> bool {
        !self.user.is_empty() && !self.domain.is_empty()
    }
}

impl std::fmt::Display for PrincipalId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.user, self.domain)
    }
}

/// Address of one agent on the simulated network, e.g. `proxy/subsidiary-a`.
///
/// The part before `/` names the agent role; the conformance checker and the
/// trace scans rely on that convention.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EndpointId(pub String);

impl EndpointId {
    pub fn new(id: impl Into<String>) -> Self {
        EndpointId(id.into())
    }

    pub fn interface(user: &str) -> Self {
        EndpointId(format!("interface/{user}"))
    }

    pub fn proxy(domain: &str) -> Self {
        EndpointId(format!("proxy/{domain}"))
    }

    pub fn tua(domain: &str) -> Self {
        EndpointId(format!("tua/{domain}"))
    }

    pub fn ma_host() -> Self {
        EndpointId("mahost/csp".into())
    }

    pub fn dta() -> Self {
        EndpointId("dta/csp".into())
    }

    pub fn csp() -> Self {
        EndpointId("csp/service".into())
    }

    pub fn role(&self) -> Role {
        match self.0.split('/').next().unwrap_or("") {
            "interface" => Role::Interface,
            "proxy" => Role::Proxy,
            "tua" => Role::Tua,
            "mahost" => Role::MaHost,
            "dta" => Role::Dta,
            "csp" => Role::Csp,
            _ => Role::Unknown,
        }
    }
}

impl std::fmt::Display for EndpointId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Agent role, parsed from the endpoint id prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Interface,
    Proxy,
    Tua,
    MaHost,
    Dta,
    Csp,
    Unknown,
}

/// Request lifecycle id; every envelope belonging to one request carries the
/// same value, and the single-use mobile agent of that request shares it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub u64);

impl std::fmt::Display for RequestId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// The thirteen wire message types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MsgType {
    AuthSubmit,
    AuthResult,
    TrustQueryUser,
    TrustReplyUser,
    MigrateOut,
    DomainTrustQuery,
    DomainTrustReply,
    ServiceCall,
    ServiceResult,
    MigrateBack,
    BreachNotice,
    DeliverResult,
    Reject,
}

impl MsgType {
    pub fn as_str(self) -> &'static str {
        match self {
            MsgType::AuthSubmit => "AuthSubmit",
            MsgType::AuthResult => "AuthResult",
            MsgType::TrustQueryUser => "TrustQueryUser",
            MsgType::TrustReplyUser => "TrustReplyUser",
            MsgType::MigrateOut => "MigrateOut",
            MsgType::DomainTrustQuery => "DomainTrustQuery",
            MsgType::DomainTrustReply => "DomainTrustReply",
            MsgType::ServiceCall => "ServiceCall",
            MsgType::ServiceResult => "ServiceResult",
            MsgType::MigrateBack => "MigrateBack",
            MsgType::BreachNotice => "BreachNotice",
            MsgType::DeliverResult => "DeliverResult",
            MsgType::Reject => "Reject",
        }
    }
}

impl std::fmt::Display for MsgType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Why a request was denied. Authentication failures are deliberately opaque:
/// unknown user, bad password, and removed user all surface as `Auth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectStage {
    Auth,
    UserGate,
    DomainGate,
    Timeout,
    Removed,
}

impl RejectStage {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectStage::Auth => "auth",
            RejectStage::UserGate => "user_gate",
            RejectStage::DomainGate => "domain_gate",
            RejectStage::Timeout => "timeout",
            RejectStage::Removed => "removed",
        }
    }
}

/// The migrating state of a mobile agent: the sealed request it carries on
/// the way out, plus the result on the way back. Code mobility is modeled as
/// this state envelope; the host at the provider side instantiates it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MobileAgentState {
    pub principal: PrincipalId,
    pub request: String,
    pub response: Option<String>,
    /// Proxy endpoint the agent returns to.
    pub origin: EndpointId,
}

/// Typed message body; one variant per [`MsgType`].
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Credentials and the service request, interface to proxy.
    AuthSubmit { principal: PrincipalId, secret: String, request: String },
    /// Successful authentication; the proxy opened session `session`.
    AuthResult { principal: PrincipalId, session: u64 },
    /// Proxy asks the user trust agent for a gate verdict.
    TrustQueryUser { principal: PrincipalId },
    TrustReplyUser { principal: PrincipalId, trusted: bool },
    /// Outbound migration carrying the mobile agent to the provider site.
    MigrateOut { agent: MobileAgentState },
    /// Mobile agent asks the domain trust agent for a gate verdict.
    DomainTrustQuery { principal: PrincipalId },
    DomainTrustReply { principal: PrincipalId, trusted: bool },
    ServiceCall { principal: PrincipalId, request: String },
    ServiceResult { principal: PrincipalId, response: String },
    /// Return migration carrying the service result home.
    MigrateBack { agent: MobileAgentState },
    /// Trust report toward a trust agent (or, with `removal`, the user trust
    /// agent telling the proxy a principal was ejected). Severity `positive`
    /// reports a completed granted request; `wrong` and `malicious` report
    /// breaches.
    BreachNotice { principal: PrincipalId, severity: ActionKind, removal: bool },
    DeliverResult { principal: PrincipalId, response: String },
    Reject { principal: PrincipalId, stage: RejectStage },
}

impl Payload {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Payload::AuthSubmit { .. } => MsgType::AuthSubmit,
            Payload::AuthResult { .. } => MsgType::AuthResult,
            Payload::TrustQueryUser { .. } => MsgType::TrustQueryUser,
            Payload::TrustReplyUser { .. } => MsgType::TrustReplyUser,
            Payload::MigrateOut { .. } => MsgType::MigrateOut,
            Payload::DomainTrustQuery { .. } => MsgType::DomainTrustQuery,
            Payload::DomainTrustReply { .. } => MsgType::DomainTrustReply,
            Payload::ServiceCall { .. } => MsgType::ServiceCall,
            Payload::ServiceResult { .. } => MsgType::ServiceResult,
            Payload::MigrateBack { .. } => MsgType::MigrateBack,
            Payload::BreachNotice { .. } => MsgType::BreachNotice,
            Payload::DeliverResult { .. } => MsgType::DeliverResult,
            Payload::Reject { .. } => MsgType::Reject,
        }
    }

    pub fn principal(&self) -> &PrincipalId {
        match self {
            Payload::AuthSubmit { principal, .. }
            | Payload::AuthResult { principal, .. }
            | Payload::TrustQueryUser { principal }
            | Payload::TrustReplyUser { principal, .. }
            | Payload::DomainTrustQuery { principal }
            | Payload::DomainTrustReply { principal, .. }
            | Payload::ServiceCall { principal, .. }
            | Payload::ServiceResult { principal, .. }
            | Payload::BreachNotice { principal, .. }
            | Payload::DeliverResult { principal, .. }
            | Payload::Reject { principal, .. } => principal,
            Payload::MigrateOut { agent } | Payload::MigrateBack { agent } => &agent.principal,
        }
    }
}

/// One wire message.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    /// Global send sequence number, assigned by the transport.
    pub seq: u64,
    pub req_id: RequestId,
    pub from: EndpointId,
    pub to: EndpointId,
    pub payload: Payload,
    /// Integrity tag over the canonical payload bytes.
    pub seal: SealTag,
}

impl Envelope {
    pub fn msg_type(&self) -> MsgType {
        self.payload.msg_type()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_roles_parse_from_prefix() {
        assert_eq!(EndpointId::interface("alice").role(), Role::Interface);
        assert_eq!(EndpointId::proxy("d").role(), Role::Proxy);
        assert_eq!(EndpointId::tua("d").role(), Role::Tua);
        assert_eq!(EndpointId::ma_host().role(), Role::MaHost);
        assert_eq!(EndpointId::dta().role(), Role::Dta);
        assert_eq!(EndpointId::csp().role(), Role::Csp);
        assert_eq!(EndpointId::new("weird").role(), Role::Unknown);
    }

    #[test]
    fn principal_validity() {
        assert!(PrincipalId::new("u", "d").is_valid());
        assert!(!PrincipalId::new("", "d").is_valid());
        assert!(!PrincipalId::new("u", "").is_valid());
    }

    #[test]
    fn payload_msg_type_pairing() {
        let p = PrincipalId::new("u", "d");
        assert_eq!(Payload::TrustQueryUser { principal: p.clone() }.msg_type(), MsgType::TrustQueryUser);
        assert_eq!(
            Payload::Reject { principal: p, stage: RejectStage::Auth }.msg_type(),
            MsgType::Reject
        );
    }
}
