//! Proxy agent: authenticates users against salted credential digests, gates
//! requests through the user trust agent, launches the mobile agent toward
//! the provider site, and routes results back to the right interface agent.
//!
//! Authentication failures are opaque on the wire: unknown user, bad
//! password, and removed user all produce the same `Reject` at stage `auth`;
//! the distinction lives only in the proxy audit log.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use crate::protocol::{
    EndpointId, MobileAgentState, Payload, PrincipalId, RejectStage, RequestId,
};
use crate::simnet::{AgentEvent, Ctx};
use crate::trust_core::ActionKind;

use super::{
    accept_envelope, audit, timer_key, timer_parts, Agent, AuditEntry, Keyring, TK_PROXY_DEADLINE,
};

/// Salted password digest held by the proxy's access management module.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Credential {
    pub salt: [u8; 16],
    pub digest: [u8; 32],
}

impl Credential {
    pub fn derive(salt: [u8; 16], password: &str) -> Self {
        let mut h = Sha256::new();
        h.update(salt);
        h.update(password.as_bytes());
        Credential { salt, digest: h.finalize().into() }
    }

    pub fn matches(&self, password: &str) -> bool {
        Credential::derive(self.salt, password).digest == self.digest
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    AwaitTrustReply,
    AwaitReturn,
}

#[derive(Debug, Clone)]
struct Session {
    user: String,
    interface: EndpointId,
    request: String,
    phase: Phase,
    session_id: u64,
    /// Bumped on every phase change so stale deadline timers self-ignore.
    generation: u8,
}

/// Per-domain proxy agent.
pub struct ProxyAgent {
    endpoint: EndpointId,
    domain: String,
    tua: EndpointId,
    ma_host: EndpointId,
    keyring: Keyring,
    creds: BTreeMap<String, Credential>,
    removed: BTreeSet<String>,
    sessions: BTreeMap<RequestId, Session>,
    by_user: BTreeMap<String, RequestId>,
    session_counter: u64,
    deadline: u64,
    /// Test double: skip the user-tier gate and migrate straight away.
    pub misbehave_skip_user_gate: bool,
    pub audit: Vec<AuditEntry>,
}

impl ProxyAgent {
    pub fn new(
        domain: impl Into<String>,
        tua: EndpointId,
        ma_host: EndpointId,
        keyring: Keyring,
        deadline: u64,
    ) -> Self {
        let domain = domain.into();
        ProxyAgent {
            endpoint: EndpointId::proxy(&domain),
            domain,
            tua,
            ma_host,
            keyring,
            creds: BTreeMap::new(),
            removed: BTreeSet::new(),
            sessions: BTreeMap::new(),
            by_user: BTreeMap::new(),
            session_counter: 0,
            deadline,
            misbehave_skip_user_gate: false,
            audit: Vec::new(),
        }
    }

    pub fn endpoint(&self) -> &EndpointId {
        &self.endpoint
    }

    pub fn add_user(&mut self, user: impl Into<String>, credential: Credential) {
        self.creds.insert(user.into(), credential);
    }

    pub fn is_removed(&self, user: &str) -> bool {
        self.removed.contains(user)
    }

    pub fn live_sessions(&self) -> usize {
        self.sessions.len()
    }

    fn reject(&mut self, ctx: &mut Ctx, to: &EndpointId, req: RequestId, principal: &PrincipalId, stage: RejectStage) {
        let payload = Payload::Reject { principal: principal.clone(), stage };
        let tag = self.keyring.sealed(&self.endpoint, to, &payload);
        ctx.send(to.clone(), req, payload, tag);
    }

    fn send_to(&mut self, ctx: &mut Ctx, to: &EndpointId, req: RequestId, payload: Payload) {
        let tag = self.keyring.sealed(&self.endpoint, to, &payload);
        ctx.send(to.clone(), req, payload, tag);
    }

    fn close_session(&mut self, req: RequestId) {
        if let Some(session) = self.sessions.remove(&req) {
            self.by_user.remove(&session.user);
        }
    }

    fn on_auth_submit(
        &mut self,
        ctx: &mut Ctx,
        from: EndpointId,
        req: RequestId,
        principal: PrincipalId,
        secret: String,
        request: String,
    ) {
        if self.sessions.contains_key(&req) {
            audit(&mut self.audit, ctx.now(), &self.endpoint, "duplicate_auth_submit", Some(req), Some(&principal.user), "ignored");
            return;
        }
        let user = principal.user.clone();
        let deny = |this: &mut Self, ctx: &mut Ctx, why: &str| {
            audit(&mut this.audit, ctx.now(), &this.endpoint, "auth_rejected", Some(req), Some(&user), why);
            this.reject(ctx, &from, req, &principal, RejectStage::Auth);
        };
        if !principal.is_valid() || principal.domain != self.domain {
            return deny(self, ctx, "principal not valid for this domain");
        }
        if self.removed.contains(&principal.user) {
            return deny(self, ctx, "user removed from domain");
        }
        let Some(cred) = self.creds.get(&principal.user) else {
            return deny(self, ctx, "unknown user");
        };
        if !cred.matches(&secret) {
            return deny(self, ctx, "bad password");
        }
        if self.by_user.contains_key(&principal.user) {
            return deny(self, ctx, "another request already in flight");
        }

        self.session_counter += 1;
        let session_id = self.session_counter;
        self.sessions.insert(
            req,
            Session {
                user: principal.user.clone(),
                interface: from.clone(),
                request: request.clone(),
                phase: Phase::AwaitTrustReply,
                session_id,
                generation: 0,
            },
        );
        self.by_user.insert(principal.user.clone(), req);
        audit(&mut self.audit, ctx.now(), &self.endpoint, "auth_ok", Some(req), Some(&principal.user), format!("session {session_id}"));

        let result = Payload::AuthResult { principal: principal.clone(), session: session_id };
        self.send_to(ctx, &from.clone(), req, result);

        if self.misbehave_skip_user_gate {
            // ordering mutation used by conformance tests: no TUA gate
            self.launch_mobile_agent(ctx, req, &principal, &request);
        } else {
            let query = Payload::TrustQueryUser { principal };
            let tua = self.tua.clone();
            self.send_to(ctx, &tua, req, query);
        }
        ctx.arm_timer(self.deadline, timer_key(TK_PROXY_DEADLINE, 0, req));
    }

    fn launch_mobile_agent(&mut self, ctx: &mut Ctx, req: RequestId, principal: &PrincipalId, request: &str) {
        if let Some(session) = self.sessions.get_mut(&req) {
            session.phase = Phase::AwaitReturn;
            session.generation += 1;
            let generation = session.generation;
            let payload = Payload::MigrateOut {
                agent: MobileAgentState {
                    principal: principal.clone(),
                    request: request.to_string(),
                    response: None,
                    origin: self.endpoint.clone(),
                },
            };
            let host = self.ma_host.clone();
            self.send_to(ctx, &host, req, payload);
            ctx.arm_timer(self.deadline, timer_key(TK_PROXY_DEADLINE, generation, req));
            audit(&mut self.audit, ctx.now(), &self.endpoint, "mobile_agent_launched", Some(req), None, "migrating to provider site");
        }
    }

    fn on_trust_reply(&mut self, ctx: &mut Ctx, req: RequestId, principal: PrincipalId, trusted: bool) {
        let Some(session) = self.sessions.get(&req) else {
            audit(&mut self.audit, ctx.now(), &self.endpoint, "stale_trust_reply", Some(req), None, "no session");
            return;
        };
        if session.phase != Phase::AwaitTrustReply {
            audit(&mut self.audit, ctx.now(), &self.endpoint, "stale_trust_reply", Some(req), None, "phase mismatch");
            return;
        }
        if trusted {
            let request = session.request.clone();
            self.launch_mobile_agent(ctx, req, &principal, &request);
        } else {
            let interface = session.interface.clone();
            audit(&mut self.audit, ctx.now(), &self.endpoint, "user_gate_rejected", Some(req), Some(&principal.user), "request removed");
            self.reject(ctx, &interface, req, &principal, RejectStage::UserGate);
            self.close_session(req);
        }
    }

    fn on_migrate_back(&mut self, ctx: &mut Ctx, req: RequestId, agent: MobileAgentState) {
        let Some(session) = self.sessions.get(&req) else {
            audit(
                &mut self.audit,
                ctx.now(),
                &self.endpoint,
                "session_expired",
                Some(req),
                Some(&agent.principal.user),
                "result discarded",
            );
            return;
        };
        let interface = session.interface.clone();
        let response = agent.response.clone().unwrap_or_default();
        let principal = agent.principal.clone();
        let deliver = Payload::DeliverResult { principal: principal.clone(), response };
        self.send_to(ctx, &interface, req, deliver);
        // STEP 11 fan-out: tell the user trust agent the request completed
        let report = Payload::BreachNotice {
            principal: principal.clone(),
            severity: ActionKind::Positive,
            removal: false,
        };
        let tua = self.tua.clone();
        self.send_to(ctx, &tua, req, report);
        audit(&mut self.audit, ctx.now(), &self.endpoint, "result_delivered", Some(req), Some(&principal.user), "trust report sent");
        self.close_session(req);
    }

    fn on_ma_reject(&mut self, ctx: &mut Ctx, req: RequestId, principal: PrincipalId, stage: RejectStage) {
        let Some(session) = self.sessions.get(&req) else {
            audit(&mut self.audit, ctx.now(), &self.endpoint, "stale_ma_reject", Some(req), None, "no session");
            return;
        };
        let interface = session.interface.clone();
        self.reject(ctx, &interface, req, &principal, stage);
        if stage == RejectStage::DomainGate {
            // the mobile agent deleted the request; inform the user trust
            // agent so the requester is penalized as a wrong action
            let notice = Payload::BreachNotice {
                principal: principal.clone(),
                severity: ActionKind::Wrong,
                removal: false,
            };
            let tua = self.tua.clone();
            self.send_to(ctx, &tua, req, notice);
        }
        audit(
            &mut self.audit,
            ctx.now(),
            &self.endpoint,
            "ma_reject_forwarded",
            Some(req),
            Some(&principal.user),
            stage.as_str(),
        );
        self.close_session(req);
    }

    fn on_removal_notice(&mut self, ctx: &mut Ctx, principal: PrincipalId) {
        self.removed.insert(principal.user.clone());
        audit(
            &mut self.audit,
            ctx.now(),
            &self.endpoint,
            "user_removed",
            None,
            Some(&principal.user),
            "future authentications will be rejected",
        );
        if let Some(&req) = self.by_user.get(&principal.user) {
            if let Some(session) = self.sessions.get(&req) {
                let interface = session.interface.clone();
                self.reject(ctx, &interface, req, &principal, RejectStage::Removed);
                self.close_session(req);
            }
        }
    }
}

impl Agent for ProxyAgent {
    fn handle(&mut self, ctx: &mut Ctx, event: AgentEvent) {
        match event {
            AgentEvent::Timer { key } => {
                let (kind, generation, req) = timer_parts(key);
                if kind != TK_PROXY_DEADLINE {
                    return;
                }
                let live = self
                    .sessions
                    .get(&req)
                    .map(|s| s.generation == generation)
                    .unwrap_or(false);
                if live {
                    let session = self.sessions.get(&req).expect("checked live");
                    let interface = session.interface.clone();
                    let user = session.user.clone();
                    let session_id = session.session_id;
                    let principal = PrincipalId::new(user.clone(), self.domain.clone());
                    audit(
                        &mut self.audit,
                        ctx.now(),
                        &self.endpoint,
                        "request_timeout",
                        Some(req),
                        Some(&user),
                        format!("session {session_id} failing closed"),
                    );
                    self.reject(ctx, &interface, req, &principal, RejectStage::Timeout);
                    self.close_session(req);
                }
            }
            AgentEvent::Delivered { bytes, .. } => {
                let Some(env) = accept_envelope(
                    &self.keyring,
                    &bytes,
                    ctx.now(),
                    &self.endpoint,
                    &mut self.audit,
                ) else {
                    return;
                };
                let req = env.req_id;
                match env.payload {
                    Payload::AuthSubmit { principal, secret, request } => {
                        self.on_auth_submit(ctx, env.from, req, principal, secret, request);
                    }
                    Payload::TrustReplyUser { principal, trusted } => {
                        self.on_trust_reply(ctx, req, principal, trusted);
                    }
                    Payload::MigrateBack { agent } => {
                        self.on_migrate_back(ctx, req, agent);
                    }
                    Payload::Reject { principal, stage } => {
                        self.on_ma_reject(ctx, req, principal, stage);
                    }
                    Payload::BreachNotice { principal, removal, .. } => {
                        if removal {
                            self.on_removal_notice(ctx, principal);
                        }
                    }
                    other => {
                        audit(
                            &mut self.audit,
                            ctx.now(),
                            &self.endpoint,
                            "unexpected_message",
                            Some(req),
                            None,
                            other.msg_type().to_string(),
                        );
                    }
                }
            }
            AgentEvent::Note { .. } => {}
        }
    }
}
