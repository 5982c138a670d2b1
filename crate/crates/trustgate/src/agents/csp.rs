//! Stub cloud service. Serves requests arriving via a mobile agent envelope
//! and hands each task's observed outcome to the co-located domain trust
//! agent in the same cycle (the monitoring tap). The outcome per request is
//! scripted by the scenario; the service is a pure lookup.

use std::collections::BTreeMap;

use crate::protocol::{EndpointId, Payload, RequestId};
use crate::simnet::{AgentEvent, Ctx, SiteNote};
use crate::trust_core::ActionKind;

use super::{accept_envelope, audit, Agent, AuditEntry, Keyring};

pub struct CspService {
    endpoint: EndpointId,
    dta: EndpointId,
    keyring: Keyring,
    /// Scripted response and ground-truth outcome per request.
    catalog: BTreeMap<RequestId, (String, ActionKind)>,
    pub served: u64,
    pub audit: Vec<AuditEntry>,
}

impl CspService {
    pub fn new(dta: EndpointId, keyring: Keyring) -> Self {
        CspService {
            endpoint: EndpointId::csp(),
            dta,
            keyring,
            catalog: BTreeMap::new(),
            served: 0,
            audit: Vec::new(),
        }
    }

    pub fn endpoint(&self) -> &EndpointId {
        &self.endpoint
    }

    pub fn add_entry(&mut self, req: RequestId, response: impl Into<String>, outcome: ActionKind) {
        self.catalog.insert(req, (response.into(), outcome));
    }
}

impl Agent for CspService {
    fn handle(&mut self, ctx: &mut Ctx, event: AgentEvent) {
        let AgentEvent::Delivered { bytes, .. } = event else {
            return;
        };
        let Some(env) =
            accept_envelope(&self.keyring, &bytes, ctx.now(), &self.endpoint, &mut self.audit)
        else {
            return;
        };
        match env.payload {
            Payload::ServiceCall { principal, request } => {
                let (response, outcome) = self
                    .catalog
                    .get(&env.req_id)
                    .cloned()
                    .unwrap_or_else(|| (format!("ok:{request}"), ActionKind::Positive));
                self.served += 1;
                let result = Payload::ServiceResult { principal: principal.clone(), response };
                let tag = self.keyring.sealed(&self.endpoint, &env.from, &result);
                ctx.send(env.from, env.req_id, result, tag);
                // same-site monitoring tap, same event cycle
                ctx.note(
                    self.dta.clone(),
                    SiteNote { req_id: env.req_id, principal: principal.clone(), outcome },
                );
                audit(
                    &mut self.audit,
                    ctx.now(),
                    &self.endpoint,
                    "served",
                    Some(env.req_id),
                    Some(&principal.user),
                    format!("outcome {outcome}"),
                );
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
}
