//! Domain trust agent at the provider site. Answers domain-tier gate queries
//! and monitors every task performed by the service: each outcome is folded
//! into the requesting user's domain ledger, and a breach — a malicious
//! outcome, or the domain falling below its threshold — is reported to the
//! trust user agent of that domain in the same event cycle.

use std::collections::BTreeMap;

use crate::protocol::{EndpointId, Payload, PrincipalId, RequestId};
use crate::simnet::{AgentEvent, Ctx, SiteNote};
use crate::trust_core::{apply_action, ActionKind, TrustDb, TrustParams, TrustRecord};

use super::{accept_envelope, audit, Agent, AuditEntry, Keyring};

/// Provider-side trust agent holding one ledger per domain.
pub struct DomainTrustAgent {
    endpoint: EndpointId,
    keyring: Keyring,
    params: TrustParams,
    db: TrustDb,
    thresholds: BTreeMap<String, f64>,
    default_threshold: f64,
    /// Where to send breach notices, per domain.
    tuas: BTreeMap<String, EndpointId>,
    series: BTreeMap<String, Vec<f64>>,
    pub notices_sent: u64,
    pub audit: Vec<AuditEntry>,
}

impl DomainTrustAgent {
    pub fn new(keyring: Keyring, params: TrustParams, default_threshold: f64) -> Self {
        DomainTrustAgent {
            endpoint: EndpointId::dta(),
            keyring,
            params,
            db: TrustDb::new(),
            thresholds: BTreeMap::new(),
            default_threshold,
            tuas: BTreeMap::new(),
            series: BTreeMap::new(),
            notices_sent: 0,
            audit: Vec::new(),
        }
    }

    pub fn endpoint(&self) -> &EndpointId {
        &self.endpoint
    }

    pub fn add_domain(&mut self, domain: impl Into<String>, threshold: f64, tua: EndpointId) {
        let domain = domain.into();
        self.thresholds.insert(domain.clone(), threshold);
        self.tuas.insert(domain.clone(), tua);
        self.register(&domain);
    }

    pub fn db(&self) -> &TrustDb {
        &self.db
    }

    pub fn record_for(&self, domain: &str) -> Option<&TrustRecord> {
        self.db.get(domain)
    }

    pub fn threshold_of(&self, domain: &str) -> f64 {
        self.thresholds.get(domain).copied().unwrap_or(self.default_threshold)
    }

    pub fn trust_series(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.series
    }

    fn register(&mut self, domain: &str) {
        if !self.db.contains(domain) {
            self.db.get_or_register(domain, &self.params);
            self.thresholds.entry(domain.to_string()).or_insert(self.default_threshold);
            self.series.insert(domain.to_string(), vec![self.params.initial_trust]);
        }
    }

    /// Domain-tier gate verdict; unknown domains are registered at the
    /// initial trust with the default threshold.
    pub fn check(&mut self, domain: &str) -> bool {
        self.register(domain);
        let value = self.db.get(domain).expect("registered above").state.value;
        value >= self.threshold_of(domain)
    }

    /// Folds one observed task outcome into the domain ledger; emits a breach
    /// notice when the outcome was malicious or the domain fell below its
    /// threshold.
    fn on_task_outcome(&mut self, ctx: &mut Ctx, req: RequestId, principal: &PrincipalId, outcome: ActionKind) {
        let domain = principal.domain.as_str();
        self.register(domain);
        let record = self.db.get_mut(domain).expect("registered above");
        if record.state.removed {
            return;
        }
        let state = apply_action(&mut record.ledger, &record.state, outcome, &self.params)
            .expect("live domain ledger");
        record.state = state;
        let value = record.state.value;
        self.series.get_mut(domain).expect("registered").push(value);
        let threshold = self.threshold_of(domain);
        audit(
            &mut self.audit,
            ctx.now(),
            &self.endpoint,
            "task_observed",
            Some(req),
            Some(&principal.user),
            format!("{outcome} -> domain trust {value:.6}"),
        );

        let breach = outcome == ActionKind::Malicious || value < threshold;
        if breach {
            let severity =
                if outcome == ActionKind::Malicious { ActionKind::Malicious } else { ActionKind::Wrong };
            let Some(tua) = self.tuas.get(domain).cloned() else {
                audit(&mut self.audit, ctx.now(), &self.endpoint, "no_tua_for_domain", Some(req), None, domain.to_string());
                return;
            };
            let notice = Payload::BreachNotice { principal: principal.clone(), severity, removal: false };
            let tag = self.keyring.sealed(&self.endpoint, &tua, &notice);
            ctx.send(tua, req, notice, tag);
            self.notices_sent += 1;
            audit(
                &mut self.audit,
                ctx.now(),
                &self.endpoint,
                "breach_notice_sent",
                Some(req),
                Some(&principal.user),
                format!("severity {severity}"),
            );
        }
    }
}

impl Agent for DomainTrustAgent {
    fn handle(&mut self, ctx: &mut Ctx, event: AgentEvent) {
        match event {
            AgentEvent::Note { note } => {
                let SiteNote { req_id, principal, outcome } = note;
                self.on_task_outcome(ctx, req_id, &principal, outcome);
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
                    Payload::DomainTrustQuery { principal } => {
                        let trusted = self.check(&principal.domain);
                        let reply = Payload::DomainTrustReply { principal, trusted };
                        let tag = self.keyring.sealed(&self.endpoint, &env.from, &reply);
                        ctx.send(env.from, env.req_id, reply, tag);
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
            AgentEvent::Timer { .. } => {}
        }
    }
}
