//! Trust user agent: holds each domain member's trust ledger, answers the
//! proxy's gate queries, folds reported actions into the trust value, and
//! ejects users whose malicious streak trips the removal policy.
//!
//! Exactly one trust action is recorded per request lifecycle: the first
//! notice for a request wins and later ones are ignored. A breach report from
//! the domain trust agent travels fewer hops than the proxy's completion
//! report, so a breached request is recorded at its breach severity, not as a
//! positive completion.

use std::collections::{BTreeMap, BTreeSet};

use crate::protocol::{EndpointId, Payload, PrincipalId, RequestId};
use crate::simnet::{AgentEvent, Ctx};
use crate::trust_core::{
    apply_action, should_remove, ActionKind, TrustClass, TrustDb, TrustParams, TrustRecord,
};

use super::{accept_envelope, audit, Agent, AuditEntry, Keyring};

/// Per-domain trust user agent.
pub struct TrustUserAgent {
    endpoint: EndpointId,
    domain: String,
    proxy: EndpointId,
    keyring: Keyring,
    params: TrustParams,
    db: TrustDb,
    members: BTreeSet<String>,
    recorded: BTreeSet<RequestId>,
    series: BTreeMap<String, Vec<f64>>,
    pub removals: u64,
    pub audit: Vec<AuditEntry>,
}

impl TrustUserAgent {
    pub fn new(domain: impl Into<String>, proxy: EndpointId, keyring: Keyring, params: TrustParams) -> Self {
        let domain = domain.into();
        TrustUserAgent {
            endpoint: EndpointId::tua(&domain),
            domain,
            proxy,
            keyring,
            params,
            db: TrustDb::new(),
            members: BTreeSet::new(),
            recorded: BTreeSet::new(),
            series: BTreeMap::new(),
            removals: 0,
            audit: Vec::new(),
        }
    }

    pub fn endpoint(&self) -> &EndpointId {
        &self.endpoint
    }

    pub fn db(&self) -> &TrustDb {
        &self.db
    }

    pub fn is_member(&self, user: &str) -> bool {
        self.members.contains(user)
    }

    pub fn record_for(&self, user: &str) -> Option<&TrustRecord> {
        self.db.get(user)
    }

    /// Trust value after each recorded action, starting at the initial trust.
    pub fn trust_series(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.series
    }

    fn register(&mut self, user: &str) {
        if !self.db.contains(user) {
            self.db.get_or_register(user, &self.params);
            self.members.insert(user.to_string());
            self.series.insert(user.to_string(), vec![self.params.initial_trust]);
        }
    }

    /// Gate verdict for one user: members pass iff their trust value reaches
    /// the user threshold; removed users never pass. Unknown users are
    /// registered at the initial trust first.
    pub fn check(&mut self, user: &str) -> bool {
        self.register(user);
        let record = self.db.get(user).expect("registered above");
        !record.state.removed
            && self.members.contains(user)
            && record.state.value >= self.params.user_threshold
    }

    /// Applies one reported action for `req` to the user's ledger. Returns
    /// true when this tripped removal.
    fn apply_notice(&mut self, ctx: &mut Ctx, req: RequestId, principal: &PrincipalId, severity: ActionKind) -> bool {
        let user = principal.user.as_str();
        if !self.db.contains(user) {
            audit(&mut self.audit, ctx.now(), &self.endpoint, "unknown_user_notice", Some(req), Some(user), "notice dropped");
            return false;
        }
        if self.db.get(user).expect("checked").state.removed {
            audit(&mut self.audit, ctx.now(), &self.endpoint, "notice_for_removed_user", Some(req), Some(user), "notice dropped");
            return false;
        }
        if !self.recorded.insert(req) {
            audit(
                &mut self.audit,
                ctx.now(),
                &self.endpoint,
                "already_recorded",
                Some(req),
                Some(user),
                format!("{severity} notice ignored; request already judged"),
            );
            return false;
        }
        let record = self.db.get_mut(user).expect("checked");
        let state = apply_action(&mut record.ledger, &record.state, severity, &self.params)
            .expect("live principal with recorded action");
        record.state = state;
        self.series.get_mut(user).expect("registered").push(record.state.value);
        audit(
            &mut self.audit,
            ctx.now(),
            &self.endpoint,
            "trust_updated",
            Some(req),
            Some(user),
            format!("{severity} -> {:.6}", record.state.value),
        );

        if should_remove(&record.state, &self.params) {
            record.state.removed = true;
            record.state.class = TrustClass::NonTrusted;
            self.members.remove(user);
            self.removals += 1;
            audit(
                &mut self.audit,
                ctx.now(),
                &self.endpoint,
                "user_removed",
                Some(req),
                Some(user),
                "repetitive malicious activity",
            );
            let notice = Payload::BreachNotice {
                principal: principal.clone(),
                severity: ActionKind::Malicious,
                removal: true,
            };
            let tag = self.keyring.sealed(&self.endpoint, &self.proxy, &notice);
            ctx.send(self.proxy.clone(), req, notice, tag);
            return true;
        }
        false
    }
}

impl Agent for TrustUserAgent {
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
            Payload::TrustQueryUser { principal } => {
                if principal.domain != self.domain {
                    audit(
                        &mut self.audit,
                        ctx.now(),
                        &self.endpoint,
                        "foreign_domain_query",
                        Some(env.req_id),
                        Some(&principal.user),
                        principal.domain.clone(),
                    );
                    return;
                }
                let trusted = self.check(&principal.user);
                let reply = Payload::TrustReplyUser { principal, trusted };
                let tag = self.keyring.sealed(&self.endpoint, &env.from, &reply);
                ctx.send(env.from, env.req_id, reply, tag);
            }
            Payload::BreachNotice { principal, severity, removal } => {
                if removal {
                    // removal escalations flow the other way
                    audit(
                        &mut self.audit,
                        ctx.now(),
                        &self.endpoint,
                        "unexpected_message",
                        Some(env.req_id),
                        Some(&principal.user),
                        "removal-flagged notice at TUA",
                    );
                    return;
                }
                self.apply_notice(ctx, env.req_id, &principal, severity);
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
