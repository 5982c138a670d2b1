//! Interface agent: the static agent on the user's device. It acquires the
//! user's requests, submits them (credentials plus request in one envelope)
//! to the domain proxy, and displays results. At most one request per user is
//! in flight at a time.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::protocol::{EndpointId, Payload, PrincipalId, RejectStage, RequestId};
use crate::simnet::{AgentEvent, Ctx};

use super::{
    accept_envelope, audit, timer_key, timer_parts, Agent, AuditEntry, Keyring,
    TK_INTERFACE_DEADLINE, TK_SUBMIT,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubmitError {
    #[error("a request is already in flight for this user")]
    Busy,
    #[error("principal ids must be non-empty")]
    InvalidPrincipal,
}

#[derive(Debug, Clone)]
struct Scheduled {
    body: String,
    /// Password to present; `None` uses the user's configured secret.
    secret_override: Option<String>,
}

/// Per-user interface agent.
pub struct InterfaceAgent {
    endpoint: EndpointId,
    proxy: EndpointId,
    principal: PrincipalId,
    secret: String,
    keyring: Keyring,
    schedule: BTreeMap<RequestId, Scheduled>,
    pending: Option<RequestId>,
    /// Local liveness fallback; clears a stuck request so the user can retry.
    deadline: u64,
    /// Requests refused locally because another was in flight.
    pub busy: BTreeSet<RequestId>,
    /// Requests cleared by the local deadline with no terminal response.
    pub local_timed_out: BTreeSet<RequestId>,
    pub granted: u64,
    pub rejected: u64,
    pub audit: Vec<AuditEntry>,
}

impl InterfaceAgent {
    pub fn new(
        principal: PrincipalId,
        proxy: EndpointId,
        secret: impl Into<String>,
        keyring: Keyring,
        deadline: u64,
    ) -> Self {
        let endpoint = EndpointId::interface(&principal.user);
        InterfaceAgent {
            endpoint,
            proxy,
            principal,
            secret: secret.into(),
            keyring,
            schedule: BTreeMap::new(),
            pending: None,
            deadline,
            busy: BTreeSet::new(),
            local_timed_out: BTreeSet::new(),
            granted: 0,
            rejected: 0,
            audit: Vec::new(),
        }
    }

    pub fn endpoint(&self) -> &EndpointId {
        &self.endpoint
    }

    pub fn pending(&self) -> Option<RequestId> {
        self.pending
    }

    /// Registers a request the harness will fire at its scheduled time via a
    /// `TK_SUBMIT` timer.
    pub fn add_scheduled(&mut self, req: RequestId, body: impl Into<String>, secret_override: Option<String>) {
        self.schedule.insert(req, Scheduled { body: body.into(), secret_override });
    }

    /// Submits one request toward the proxy. Refuses locally (no envelope)
    /// when a request is already pending or the principal is malformed.
    pub fn submit(&mut self, ctx: &mut Ctx, req: RequestId, body: &str, secret: &str) -> Result<(), SubmitError> {
        if !self.principal.is_valid() {
            audit(
                &mut self.audit,
                ctx.now(),
                &self.endpoint,
                "submit_rejected",
                Some(req),
                Some(&self.principal.user),
                "invalid principal",
            );
            return Err(SubmitError::InvalidPrincipal);
        }
        if self.pending.is_some() {
            self.busy.insert(req);
            audit(
                &mut self.audit,
                ctx.now(),
                &self.endpoint,
                "submit_busy",
                Some(req),
                Some(&self.principal.user),
                "request already in flight",
            );
            return Err(SubmitError::Busy);
        }
        self.pending = Some(req);
        let payload = Payload::AuthSubmit {
            principal: self.principal.clone(),
            secret: secret.to_string(),
            request: body.to_string(),
        };
        let tag = self.keyring.sealed(&self.endpoint, &self.proxy, &payload);
        ctx.send(self.proxy.clone(), req, payload, tag);
        ctx.arm_timer(self.deadline, timer_key(TK_INTERFACE_DEADLINE, 0, req));
        Ok(())
    }

    fn on_result(&mut self, ctx: &Ctx, req: RequestId, granted: bool, detail: &str) {
        if self.pending == Some(req) {
            self.pending = None;
            if granted {
                self.granted += 1;
            } else {
                self.rejected += 1;
            }
            audit(
                &mut self.audit,
                ctx.now(),
                &self.endpoint,
                if granted { "result_displayed" } else { "request_denied" },
                Some(req),
                Some(&self.principal.user),
                detail,
            );
        } else {
            audit(
                &mut self.audit,
                ctx.now(),
                &self.endpoint,
                "stale_result",
                Some(req),
                Some(&self.principal.user),
                detail,
            );
        }
    }
}

impl Agent for InterfaceAgent {
    fn handle(&mut self, ctx: &mut Ctx, event: AgentEvent) {
        match event {
            AgentEvent::Timer { key } => {
                let (kind, _, req) = timer_parts(key);
                match kind {
                    TK_SUBMIT => {
                        if let Some(entry) = self.schedule.get(&req).cloned() {
                            let secret =
                                entry.secret_override.clone().unwrap_or_else(|| self.secret.clone());
                            // Busy / invalid submissions are already counted
                            let _ = self.submit(ctx, req, &entry.body, &secret);
                        }
                    }
                    TK_INTERFACE_DEADLINE => {
                        if self.pending == Some(req) {
                            self.pending = None;
                            self.local_timed_out.insert(req);
                            audit(
                                &mut self.audit,
                                ctx.now(),
                                &self.endpoint,
                                "local_timeout",
                                Some(req),
                                Some(&self.principal.user),
                                "no terminal response before local deadline",
                            );
                        }
                    }
                    _ => {}
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
                match env.payload {
                    Payload::AuthResult { session, .. } => {
                        audit(
                            &mut self.audit,
                            ctx.now(),
                            &self.endpoint,
                            "session_opened",
                            Some(env.req_id),
                            Some(&self.principal.user),
                            format!("session {session}"),
                        );
                    }
                    Payload::DeliverResult { response, .. } => {
                        self.on_result(ctx, env.req_id, true, &response);
                    }
                    Payload::Reject { stage, .. } => {
                        let detail = format!("rejected at {}", stage.as_str());
                        self.on_result(ctx, env.req_id, false, &detail);
                        if stage == RejectStage::Removed {
                            audit(
                                &mut self.audit,
                                ctx.now(),
                                &self.endpoint,
                                "removal_notified",
                                Some(env.req_id),
                                Some(&self.principal.user),
                                "user was removed from the domain",
                            );
                        }
                    }
                    other => {
                        audit(
                            &mut self.audit,
                            ctx.now(),
                            &self.endpoint,
                            "unexpected_message",
                            Some(env.req_id),
                            Some(&self.principal.user),
                            other.msg_type().to_string(),
                        );
                    }
                }
            }
            AgentEvent::Note { .. } => {}
        }
    }
}
