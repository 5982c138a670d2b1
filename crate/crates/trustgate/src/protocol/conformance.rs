//! Sequence conformance: verifies that each request lifecycle's delivered
//! messages follow the sanctioned order.
//!
//! The reference order for a granted request is
//!
//! ```text
//! AuthSubmit -> AuthResult -> TrustQueryUser -> TrustReplyUser ->
//! MigrateOut -> DomainTrustQuery -> DomainTrustReply ->
//! ServiceCall -> ServiceResult -> MigrateBack -> DeliverResult
//! ```
//!
//! plus the proxy's trust report to the user trust agent at delivery time.
//! Denied requests exit with a `Reject` at the stage that failed them; a
//! domain-tier denial additionally produces the mobile agent's `Reject` to
//! the proxy and the proxy's breach report to the user trust agent. Breach
//! notices from the domain trust agent may land any time after the service
//! call, and removal escalations from the user trust agent may trail any
//! lifecycle.
//!
//! The checker walks delivered events per request id (duplicate deliveries of
//! the same envelope and tamper-corrupted deliveries do not advance the
//! machine — receivers discard them) and reports the earliest out-of-order
//! event. A lifecycle that never reaches a terminal is reported as
//! incomplete rather than violating.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::trust_core::ActionKind;

use super::trace::{NetEvent, Trace, TraceEvent};
use super::{MsgType, RequestId, Role};

/// Per-request conformance outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Conformant,
    /// `at_event` is the trace seq of the earliest offending event.
    Violation { at_event: u64, detail: String },
    Incomplete { detail: String },
}

impl Verdict {
    pub fn is_conformant(&self) -> bool {
        matches!(self, Verdict::Conformant)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub per_request: BTreeMap<RequestId, Verdict>,
}

impl ConformanceReport {
    pub fn all_conformant(&self) -> bool {
        self.per_request.values().all(Verdict::is_conformant)
    }

    pub fn violations(&self) -> impl Iterator<Item = (&RequestId, &Verdict)> {
        self.per_request.iter().filter(|(_, v)| !v.is_conformant())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum St {
    Start,
    Submitted,
    Authed,
    UserQueried,
    UserReplied { trusted: bool },
    Migrated,
    DomainQueried,
    DomainReplied { trusted: bool },
    Serving,
    Served,
    Returned,
    Granted,
    /// Mobile agent's Reject reached the proxy; awaiting the proxy fan-out.
    MaRejecting,
    Rejected,
}

impl St {
    fn name(self) -> &'static str {
        match self {
            St::Start => "Start",
            St::Submitted => "Submitted",
            St::Authed => "Authed",
            St::UserQueried => "UserQueried",
            St::UserReplied { .. } => "UserReplied",
            St::Migrated => "Migrated",
            St::DomainQueried => "DomainQueried",
            St::DomainReplied { .. } => "DomainReplied",
            St::Serving => "Serving",
            St::Served => "Served",
            St::Returned => "Returned",
            St::Granted => "Granted",
            St::MaRejecting => "MaRejecting",
            St::Rejected => "Rejected",
        }
    }

}

struct Machine {
    state: St,
    verdict: Option<Verdict>,
    grant_notice_seen: bool,
    service_calls: u32,
    saw_any_event: bool,
}

impl Machine {
    fn new() -> Self {
        Machine {
            state: St::Start,
            verdict: None,
            grant_notice_seen: false,
            service_calls: 0,
            saw_any_event: false,
        }
    }

    fn violate(&mut self, event: &TraceEvent, detail: impl Into<String>) {
        if self.verdict.is_none() {
            self.verdict = Some(Verdict::Violation { at_event: event.seq, detail: detail.into() });
        }
    }

    fn step(&mut self, ev: &TraceEvent) {
        if self.verdict.is_some() {
            return;
        }
        let edge = (ev.msg_type, ev.from.role(), ev.to.role());
        let next = match (self.state, edge) {
            (St::Start, (MsgType::AuthSubmit, Role::Interface, Role::Proxy)) => St::Submitted,
            (St::Start, _) => {
                return self.violate(ev, format!("lifecycle must begin with AuthSubmit, saw {}", ev.msg_type));
            }

            (St::Submitted, (MsgType::AuthResult, Role::Proxy, Role::Interface)) => St::Authed,
            (St::Submitted, (MsgType::Reject, Role::Proxy, Role::Interface)) => St::Rejected,

            (St::Authed, (MsgType::TrustQueryUser, Role::Proxy, Role::Tua)) => St::UserQueried,
            (St::Authed, (MsgType::Reject, Role::Proxy, Role::Interface)) => St::Rejected,

            (St::UserQueried, (MsgType::TrustReplyUser, Role::Tua, Role::Proxy)) => {
                St::UserReplied { trusted: ev.verdict.unwrap_or(false) }
            }
            (St::UserQueried, (MsgType::Reject, Role::Proxy, Role::Interface)) => St::Rejected,

            (St::UserReplied { trusted }, (MsgType::MigrateOut, Role::Proxy, Role::MaHost)) => {
                if !trusted {
                    return self.violate(ev, "MigrateOut after a not_trusted user verdict");
                }
                St::Migrated
            }
            (St::UserReplied { .. }, (MsgType::Reject, Role::Proxy, Role::Interface)) => St::Rejected,

            (St::Migrated, (MsgType::DomainTrustQuery, Role::MaHost, Role::Dta)) => St::DomainQueried,
            (St::Migrated, (MsgType::Reject, Role::Proxy, Role::Interface)) => St::Rejected,

            (St::DomainQueried, (MsgType::DomainTrustReply, Role::Dta, Role::MaHost)) => {
                St::DomainReplied { trusted: ev.verdict.unwrap_or(false) }
            }
            (St::DomainQueried, (MsgType::Reject, Role::MaHost, Role::Proxy)) => St::MaRejecting,
            (St::DomainQueried, (MsgType::Reject, Role::Proxy, Role::Interface)) => St::Rejected,

            (St::DomainReplied { trusted }, (MsgType::ServiceCall, Role::MaHost, Role::Csp)) => {
                if !trusted {
                    return self.violate(ev, "ServiceCall after a not_trusted domain verdict");
                }
                self.service_calls = 1;
                St::Serving
            }
            (St::DomainReplied { .. }, (MsgType::Reject, Role::MaHost, Role::Proxy)) => St::MaRejecting,
            (St::DomainReplied { .. }, (MsgType::Reject, Role::Proxy, Role::Interface)) => St::Rejected,

            (St::Serving, (MsgType::ServiceResult, Role::Csp, Role::MaHost)) => St::Served,
            (St::Serving, (MsgType::ServiceCall, Role::MaHost, Role::Csp)) => {
                self.service_calls += 1;
                if self.service_calls > 2 {
                    return self.violate(ev, "more than one service retry");
                }
                St::Serving
            }
            (St::Serving, (MsgType::Reject, Role::MaHost, Role::Proxy)) => St::MaRejecting,
            (St::Serving, (MsgType::Reject, Role::Proxy, Role::Interface)) => St::Rejected,
            (St::Serving, (MsgType::BreachNotice, Role::Dta, Role::Tua)) => St::Serving,

            (St::Served, (MsgType::MigrateBack, Role::MaHost, Role::Proxy)) => St::Returned,
            (St::Served, (MsgType::ServiceResult, Role::Csp, Role::MaHost)) => St::Served,
            (St::Served, (MsgType::Reject, Role::Proxy, Role::Interface)) => St::Rejected,
            (St::Served, (MsgType::BreachNotice, Role::Dta, Role::Tua)) => St::Served,
            (St::Served, (MsgType::BreachNotice, Role::Tua, Role::Proxy)) => St::Served,

            (St::Returned, (MsgType::DeliverResult, Role::Proxy, Role::Interface)) => St::Granted,
            (St::Returned, (MsgType::Reject, Role::Proxy, Role::Interface)) => St::Rejected,
            (St::Returned, (MsgType::BreachNotice, Role::Proxy, Role::Tua)) => {
                self.grant_notice_seen = true;
                St::Returned
            }
            (St::Returned, (MsgType::BreachNotice, Role::Dta, Role::Tua)) => St::Returned,
            (St::Returned, (MsgType::BreachNotice, Role::Tua, Role::Proxy)) => St::Returned,

            (St::Granted, (MsgType::BreachNotice, Role::Proxy, Role::Tua)) => {
                self.grant_notice_seen = true;
                St::Granted
            }
            (St::Granted, (MsgType::BreachNotice, Role::Dta, Role::Tua)) => St::Granted,
            (St::Granted, (MsgType::BreachNotice, Role::Tua, Role::Proxy)) => St::Granted,

            (St::MaRejecting, (MsgType::Reject, Role::Proxy, Role::Interface)) => St::Rejected,
            (St::MaRejecting, (MsgType::BreachNotice, Role::Proxy, Role::Tua)) => St::MaRejecting,
            (St::MaRejecting, (MsgType::BreachNotice, Role::Dta, Role::Tua)) => St::MaRejecting,
            (St::MaRejecting, (MsgType::BreachNotice, Role::Tua, Role::Proxy)) => St::MaRejecting,

            // Remnants of a lifecycle the proxy already terminated: in-flight
            // envelopes are still delivered and then discarded by receivers.
            (
                St::Rejected,
                (
                    MsgType::ServiceCall
                    | MsgType::ServiceResult
                    | MsgType::MigrateBack
                    | MsgType::BreachNotice
                    | MsgType::DomainTrustQuery
                    | MsgType::DomainTrustReply,
                    _,
                    _,
                ),
            ) => St::Rejected,
            (St::Rejected, (MsgType::Reject, Role::MaHost, Role::Proxy)) => St::Rejected,

            (state, _) => {
                return self.violate(
                    ev,
                    format!("{} ({} -> {}) not allowed in state {}", ev.msg_type, ev.from, ev.to, state.name()),
                );
            }
        };
        self.state = next;
    }

    fn finish(self) -> Verdict {
        if let Some(v) = self.verdict {
            return v;
        }
        match self.state {
            St::Rejected => Verdict::Conformant,
            St::Granted => {
                if self.grant_notice_seen {
                    Verdict::Conformant
                } else {
                    Verdict::Incomplete {
                        detail: "granted lifecycle missing the proxy's trust report".into(),
                    }
                }
            }
            state => Verdict::Incomplete {
                detail: format!("lifecycle stalled in state {}", state.name()),
            },
        }
    }
}

/// Checks every request lifecycle in the trace. An empty trace is vacuously
/// conformant.
pub fn check_conformance(trace: &Trace) -> ConformanceReport {
    let mut machines: BTreeMap<RequestId, Machine> = BTreeMap::new();
    let mut delivered_envs: BTreeSet<u64> = BTreeSet::new();

    for ev in &trace.events {
        let machine = machines.entry(ev.req_id).or_insert_with(Machine::new);
        machine.saw_any_event = true;
        if ev.event != NetEvent::Delivered {
            continue;
        }
        // duplicate delivery of the same envelope: receivers act once
        if !delivered_envs.insert(ev.env) {
            continue;
        }
        // tamper-corrupted deliveries are discarded at the receiving agent
        if ev.tampered {
            continue;
        }
        machine.step(ev);
    }

    ConformanceReport {
        per_request: machines.into_iter().map(|(id, m)| (id, m.finish())).collect(),
    }
}

/// Convenience for scans: true when this delivered event is a breach report
/// sent by the domain trust agent.
pub fn is_dta_breach_notice(ev: &TraceEvent) -> bool {
    ev.msg_type == MsgType::BreachNotice
        && ev.from.role() == Role::Dta
        && ev.to.role() == Role::Tua
        && ev.severity.map(ActionKind::is_negative).unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{EndpointId, RejectStage};

    struct TB {
        events: Vec<TraceEvent>,
        seq: u64,
        env: u64,
        at: u64,
    }

    impl TB {
        fn new() -> Self {
            TB { events: Vec::new(), seq: 0, env: 0, at: 0 }
        }

        fn deliver(&mut self, msg: MsgType, from: EndpointId, to: EndpointId, req: u64) -> &mut Self {
            self.deliver_full(msg, from, to, req, None, None, None)
        }

        fn deliver_full(
            &mut self,
            msg: MsgType,
            from: EndpointId,
            to: EndpointId,
            req: u64,
            verdict: Option<bool>,
            severity: Option<ActionKind>,
            stage: Option<RejectStage>,
        ) -> &mut Self {
            self.at += 1;
            self.events.push(TraceEvent {
                seq: self.seq,
                at: self.at,
                event: NetEvent::Delivered,
                env: self.env,
                msg_type: msg,
                from,
                to,
                req_id: RequestId(req),
                verdict,
                severity,
                removal: severity.map(|_| false),
                stage,
                tampered: false,
            });
            self.seq += 1;
            self.env += 1;
            self
        }

        fn trace(&self) -> Trace {
            Trace { events: self.events.clone(), max_time_exceeded: false }
        }
    }

    fn granted_request(tb: &mut TB, req: u64) {
        let ia = EndpointId::interface("alice");
        let pa = EndpointId::proxy("d");
        let tua = EndpointId::tua("d");
        let mah = EndpointId::ma_host();
        let dta = EndpointId::dta();
        let csp = EndpointId::csp();
        tb.deliver(MsgType::AuthSubmit, ia.clone(), pa.clone(), req);
        tb.deliver(MsgType::AuthResult, pa.clone(), ia.clone(), req);
        tb.deliver(MsgType::TrustQueryUser, pa.clone(), tua.clone(), req);
        tb.deliver_full(MsgType::TrustReplyUser, tua.clone(), pa.clone(), req, Some(true), None, None);
        tb.deliver(MsgType::MigrateOut, pa.clone(), mah.clone(), req);
        tb.deliver(MsgType::DomainTrustQuery, mah.clone(), dta.clone(), req);
        tb.deliver_full(MsgType::DomainTrustReply, dta.clone(), mah.clone(), req, Some(true), None, None);
        tb.deliver(MsgType::ServiceCall, mah.clone(), csp.clone(), req);
        tb.deliver(MsgType::ServiceResult, csp, mah.clone(), req);
        tb.deliver(MsgType::MigrateBack, mah, pa.clone(), req);
        tb.deliver(MsgType::DeliverResult, pa.clone(), ia, req);
        tb.deliver_full(
            MsgType::BreachNotice,
            pa,
            EndpointId::tua("d"),
            req,
            None,
            Some(ActionKind::Positive),
            None,
        );
    }

    #[test]
    fn empty_trace_is_vacuously_conformant() {
        let report = check_conformance(&Trace::new());
        assert!(report.all_conformant());
        assert!(report.per_request.is_empty());
    }

    #[test]
    fn golden_granted_lifecycle_conforms() {
        let mut tb = TB::new();
        granted_request(&mut tb, 0);
        let report = check_conformance(&tb.trace());
        assert_eq!(report.per_request[&RequestId(0)], Verdict::Conformant);
    }

    #[test]
    fn service_call_before_domain_reply_is_flagged_at_that_event() {
        let ia = EndpointId::interface("a");
        let pa = EndpointId::proxy("d");
        let tua = EndpointId::tua("d");
        let mah = EndpointId::ma_host();
        let dta = EndpointId::dta();
        let csp = EndpointId::csp();
        let mut tb = TB::new();
        tb.deliver(MsgType::AuthSubmit, ia.clone(), pa.clone(), 0);
        tb.deliver(MsgType::AuthResult, pa.clone(), ia, 0);
        tb.deliver(MsgType::TrustQueryUser, pa.clone(), tua.clone(), 0);
        tb.deliver_full(MsgType::TrustReplyUser, tua, pa.clone(), 0, Some(true), None, None);
        tb.deliver(MsgType::MigrateOut, pa, mah.clone(), 0);
        tb.deliver(MsgType::DomainTrustQuery, mah.clone(), dta, 0);
        // out of order: the service call jumps ahead of the reply
        tb.deliver(MsgType::ServiceCall, mah, csp, 0);
        let report = check_conformance(&tb.trace());
        match &report.per_request[&RequestId(0)] {
            Verdict::Violation { at_event, .. } => assert_eq!(*at_event, 6),
            v => panic!("expected violation, got {v:?}"),
        }
    }

    #[test]
    fn migrate_out_after_not_trusted_reply_is_violation() {
        let ia = EndpointId::interface("a");
        let pa = EndpointId::proxy("d");
        let tua = EndpointId::tua("d");
        let mut tb = TB::new();
        tb.deliver(MsgType::AuthSubmit, ia.clone(), pa.clone(), 0);
        tb.deliver(MsgType::AuthResult, pa.clone(), ia, 0);
        tb.deliver(MsgType::TrustQueryUser, pa.clone(), tua.clone(), 0);
        tb.deliver_full(MsgType::TrustReplyUser, tua, pa.clone(), 0, Some(false), None, None);
        tb.deliver(MsgType::MigrateOut, pa, EndpointId::ma_host(), 0);
        let report = check_conformance(&tb.trace());
        match &report.per_request[&RequestId(0)] {
            Verdict::Violation { at_event, detail } => {
                assert_eq!(*at_event, 4);
                assert!(detail.contains("not_trusted"));
            }
            v => panic!("expected violation, got {v:?}"),
        }
    }

    #[test]
    fn user_gate_reject_conforms() {
        let ia = EndpointId::interface("a");
        let pa = EndpointId::proxy("d");
        let tua = EndpointId::tua("d");
        let mut tb = TB::new();
        tb.deliver(MsgType::AuthSubmit, ia.clone(), pa.clone(), 3);
        tb.deliver(MsgType::AuthResult, pa.clone(), ia.clone(), 3);
        tb.deliver(MsgType::TrustQueryUser, pa.clone(), tua.clone(), 3);
        tb.deliver_full(MsgType::TrustReplyUser, tua, pa.clone(), 3, Some(false), None, None);
        tb.deliver_full(MsgType::Reject, pa, ia, 3, None, None, Some(RejectStage::UserGate));
        assert!(check_conformance(&tb.trace()).all_conformant());
    }

    #[test]
    fn domain_gate_reject_with_breach_notice_conforms() {
        let ia = EndpointId::interface("a");
        let pa = EndpointId::proxy("d");
        let tua = EndpointId::tua("d");
        let mah = EndpointId::ma_host();
        let dta = EndpointId::dta();
        let mut tb = TB::new();
        tb.deliver(MsgType::AuthSubmit, ia.clone(), pa.clone(), 0);
        tb.deliver(MsgType::AuthResult, pa.clone(), ia.clone(), 0);
        tb.deliver(MsgType::TrustQueryUser, pa.clone(), tua.clone(), 0);
        tb.deliver_full(MsgType::TrustReplyUser, tua.clone(), pa.clone(), 0, Some(true), None, None);
        tb.deliver(MsgType::MigrateOut, pa.clone(), mah.clone(), 0);
        tb.deliver(MsgType::DomainTrustQuery, mah.clone(), dta.clone(), 0);
        tb.deliver_full(MsgType::DomainTrustReply, dta, mah.clone(), 0, Some(false), None, None);
        tb.deliver_full(MsgType::Reject, mah, pa.clone(), 0, None, None, Some(RejectStage::DomainGate));
        tb.deliver_full(MsgType::Reject, pa.clone(), ia, 0, None, None, Some(RejectStage::DomainGate));
        tb.deliver_full(MsgType::BreachNotice, pa, tua, 0, None, Some(ActionKind::Wrong), None);
        assert!(check_conformance(&tb.trace()).all_conformant());
    }

    #[test]
    fn second_deliver_result_is_violation() {
        let mut tb = TB::new();
        granted_request(&mut tb, 0);
        tb.deliver(MsgType::DeliverResult, EndpointId::proxy("d"), EndpointId::interface("alice"), 0);
        let report = check_conformance(&tb.trace());
        assert!(!report.all_conformant());
    }

    #[test]
    fn stalled_lifecycle_is_incomplete() {
        let mut tb = TB::new();
        tb.deliver(MsgType::AuthSubmit, EndpointId::interface("a"), EndpointId::proxy("d"), 0);
        let report = check_conformance(&tb.trace());
        assert!(matches!(report.per_request[&RequestId(0)], Verdict::Incomplete { .. }));
    }

    #[test]
    fn duplicate_envelope_delivery_does_not_advance() {
        let mut tb = TB::new();
        granted_request(&mut tb, 0);
        // re-deliver the DeliverResult envelope (same env id, as a dup fault would)
        let mut dup = tb.events[10].clone();
        dup.seq = tb.seq;
        dup.at += 5;
        let mut events = tb.events.clone();
        events.push(dup);
        let report = check_conformance(&Trace { events, max_time_exceeded: false });
        assert!(report.all_conformant());
    }

    #[test]
    fn multiple_requests_checked_independently() {
        let mut tb = TB::new();
        granted_request(&mut tb, 0);
        granted_request(&mut tb, 1);
        let report = check_conformance(&tb.trace());
        assert_eq!(report.per_request.len(), 2);
        assert!(report.all_conformant());
    }
}
