//! Mobile agent host at the provider site. An arriving `MigrateOut` envelope
//! instantiates the single-use mobile agent it carries; the agent checks the
//! domain-tier gate, calls the service, and migrates back with the result.
//! Every instantiated agent ends in `Destroyed`, on every path.
//!
//! Deliveries are idempotent per agent id (the request id): a duplicated
//! migration cannot instantiate a second agent. A lost service result is
//! retried once, then the agent fails closed.

use std::collections::BTreeMap;

use crate::protocol::{EndpointId, MobileAgentState, Payload, PrincipalId, RejectStage, RequestId};
use crate::simnet::{AgentEvent, Ctx};

use super::{
    accept_envelope, audit, timer_key, timer_parts, Agent, AuditEntry, Keyring, TK_MA_GATE,
    TK_MA_SERVICE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaPhase {
    AwaitDomainReply,
    AwaitService,
    Destroyed,
}

#[derive(Debug, Clone)]
struct MobileAgent {
    principal: PrincipalId,
    request: String,
    origin: EndpointId,
    phase: MaPhase,
    retried: bool,
    migrate_backs: u32,
}

/// Provider-side platform hosting in-flight mobile agents.
pub struct MobileAgentHost {
    endpoint: EndpointId,
    dta: EndpointId,
    csp: EndpointId,
    keyring: Keyring,
    agents: BTreeMap<RequestId, MobileAgent>,
    deadline: u64,
    /// Test double: call the service without consulting the domain gate.
    pub misbehave_skip_domain_gate: bool,
    pub audit: Vec<AuditEntry>,
}

impl MobileAgentHost {
    pub fn new(dta: EndpointId, csp: EndpointId, keyring: Keyring, deadline: u64) -> Self {
        MobileAgentHost {
            endpoint: EndpointId::ma_host(),
            dta,
            csp,
            keyring,
            agents: BTreeMap::new(),
            deadline,
            misbehave_skip_domain_gate: false,
            audit: Vec::new(),
        }
    }

    pub fn endpoint(&self) -> &EndpointId {
        &self.endpoint
    }

    pub fn phase_of(&self, req: RequestId) -> Option<MaPhase> {
        self.agents.get(&req).map(|a| a.phase)
    }

    /// True when every instantiated mobile agent reached its terminal state.
    pub fn all_destroyed(&self) -> bool {
        self.agents.values().all(|a| a.phase == MaPhase::Destroyed)
    }

    pub fn spawned_count(&self) -> usize {
        self.agents.len()
    }

    fn send_to(&self, ctx: &mut Ctx, to: &EndpointId, req: RequestId, payload: Payload) {
        let tag = self.keyring.sealed(&self.endpoint, to, &payload);
        ctx.send(to.clone(), req, payload, tag);
    }

    fn call_service(&mut self, ctx: &mut Ctx, req: RequestId) {
        let Some(agent) = self.agents.get_mut(&req) else { return };
        agent.phase = MaPhase::AwaitService;
        let payload = Payload::ServiceCall {
            principal: agent.principal.clone(),
            request: agent.request.clone(),
        };
        let csp = self.csp.clone();
        self.send_to(ctx, &csp, req, payload);
        ctx.arm_timer(self.deadline, timer_key(TK_MA_SERVICE, 0, req));
    }

    fn destroy_with_reject(&mut self, ctx: &mut Ctx, req: RequestId, stage: RejectStage) {
        let Some(agent) = self.agents.get_mut(&req) else { return };
        agent.phase = MaPhase::Destroyed;
        let principal = agent.principal.clone();
        let origin = agent.origin.clone();
        let payload = Payload::Reject { principal: principal.clone(), stage };
        self.send_to(ctx, &origin, req, payload);
        audit(
            &mut self.audit,
            ctx.now(),
            &self.endpoint,
            "ma_destroyed",
            Some(req),
            Some(&principal.user),
            format!("request deleted, {}", stage.as_str()),
        );
    }

    fn on_migrate_out(&mut self, ctx: &mut Ctx, req: RequestId, state: MobileAgentState) {
        if self.agents.contains_key(&req) {
            audit(&mut self.audit, ctx.now(), &self.endpoint, "duplicate_migration", Some(req), None, "agent already instantiated");
            return;
        }
        self.agents.insert(
            req,
            MobileAgent {
                principal: state.principal.clone(),
                request: state.request,
                origin: state.origin,
                phase: MaPhase::AwaitDomainReply,
                retried: false,
                migrate_backs: 0,
            },
        );
        audit(&mut self.audit, ctx.now(), &self.endpoint, "ma_arrived", Some(req), Some(&state.principal.user), "instantiated at provider site");
        if self.misbehave_skip_domain_gate {
            // ordering mutation used by conformance tests: no domain gate
            self.call_service(ctx, req);
            return;
        }
        let payload = Payload::DomainTrustQuery { principal: state.principal };
        let dta = self.dta.clone();
        self.send_to(ctx, &dta, req, payload);
        ctx.arm_timer(self.deadline, timer_key(TK_MA_GATE, 0, req));
    }

    fn on_domain_reply(&mut self, ctx: &mut Ctx, req: RequestId, trusted: bool) {
        let Some(agent) = self.agents.get(&req) else { return };
        if agent.phase != MaPhase::AwaitDomainReply {
            return;
        }
        if trusted {
            self.call_service(ctx, req);
        } else {
            self.destroy_with_reject(ctx, req, RejectStage::DomainGate);
        }
    }

    fn on_service_result(&mut self, ctx: &mut Ctx, req: RequestId, response: String) {
        let Some(agent) = self.agents.get_mut(&req) else { return };
        if agent.phase != MaPhase::AwaitService {
            return;
        }
        agent.phase = MaPhase::Destroyed;
        agent.migrate_backs += 1;
        let payload = Payload::MigrateBack {
            agent: MobileAgentState {
                principal: agent.principal.clone(),
                request: agent.request.clone(),
                response: Some(response),
                origin: agent.origin.clone(),
            },
        };
        let origin = agent.origin.clone();
        let user = agent.principal.user.clone();
        self.send_to(ctx, &origin, req, payload);
        audit(
            &mut self.audit,
            ctx.now(),
            &self.endpoint,
            "ma_destroyed",
            Some(req),
            Some(&user),
            "result carried home",
        );
    }
}

impl Agent for MobileAgentHost {
    fn handle(&mut self, ctx: &mut Ctx, event: AgentEvent) {
        match event {
            AgentEvent::Timer { key } => {
                let (kind, _, req) = timer_parts(key);
                let Some(agent) = self.agents.get_mut(&req) else { return };
                match (kind, agent.phase) {
                    (TK_MA_GATE, MaPhase::AwaitDomainReply) => {
                        audit(&mut self.audit, ctx.now(), &self.endpoint, "gate_timeout", Some(req), None, "no domain verdict");
                        self.destroy_with_reject(ctx, req, RejectStage::Timeout);
                    }
                    (TK_MA_SERVICE, MaPhase::AwaitService) => {
                        if agent.retried {
                            audit(&mut self.audit, ctx.now(), &self.endpoint, "service_timeout", Some(req), None, "retry exhausted");
                            self.destroy_with_reject(ctx, req, RejectStage::Timeout);
                        } else {
                            agent.retried = true;
                            audit(&mut self.audit, ctx.now(), &self.endpoint, "service_retry", Some(req), None, "result lost, retrying once");
                            self.call_service(ctx, req);
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
                    Payload::MigrateOut { agent } => self.on_migrate_out(ctx, env.req_id, agent),
                    Payload::DomainTrustReply { trusted, .. } => {
                        self.on_domain_reply(ctx, env.req_id, trusted)
                    }
                    Payload::ServiceResult { response, .. } => {
                        self.on_service_result(ctx, env.req_id, response)
                    }
                    other => {
                        audit(
                            &mut self.audit,
                            ctx.now(),
                            &self.endpoint,
                            "unexpected_message",
                            Some(env.req_id),
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
