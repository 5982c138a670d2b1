//! Trace-level security scans, independent of the conformance state machine.
//!
//! These read nothing but the trace (plus, where ground truth is needed, the
//! scenario's outcome schedule), so they run identically on live runs and on
//! replayed trace files.

use std::collections::{BTreeMap, BTreeSet};

use crate::protocol::trace::{NetEvent, Trace};
use crate::protocol::{MsgType, RequestId, Role};
use crate::trust_core::ActionKind;

/// Gate soundness: once a not-trusted verdict is delivered for a request, the
/// gated migration / service call must never follow.
pub fn scan_gate_soundness(trace: &Trace) -> Vec<String> {
    let mut user_denied: BTreeSet<RequestId> = BTreeSet::new();
    let mut domain_denied: BTreeSet<RequestId> = BTreeSet::new();
    let mut violations = Vec::new();
    for ev in trace.delivered() {
        if ev.tampered {
            continue;
        }
        match ev.msg_type {
            MsgType::TrustReplyUser if ev.verdict == Some(false) => {
                user_denied.insert(ev.req_id);
            }
            MsgType::DomainTrustReply if ev.verdict == Some(false) => {
                domain_denied.insert(ev.req_id);
            }
            MsgType::MigrateOut if user_denied.contains(&ev.req_id) => {
                violations.push(format!(
                    "req {}: MigrateOut delivered at event {} after a not_trusted user verdict",
                    ev.req_id, ev.seq
                ));
            }
            MsgType::ServiceCall if domain_denied.contains(&ev.req_id) => {
                violations.push(format!(
                    "req {}: ServiceCall delivered at event {} after a not_trusted domain verdict",
                    ev.req_id, ev.seq
                ));
            }
            _ => {}
        }
    }
    violations
}

/// Mobile agent migration discipline: per request, at most one outbound and
/// one return migration are ever sent.
pub fn scan_ma_migrations(trace: &Trace) -> Vec<String> {
    let mut outbound: BTreeMap<RequestId, u64> = BTreeMap::new();
    let mut returns: BTreeMap<RequestId, u64> = BTreeMap::new();
    for ev in &trace.events {
        if ev.event != NetEvent::Sent {
            continue;
        }
        match ev.msg_type {
            MsgType::MigrateOut => *outbound.entry(ev.req_id).or_insert(0) += 1,
            MsgType::MigrateBack => *returns.entry(ev.req_id).or_insert(0) += 1,
            _ => {}
        }
    }
    let mut violations = Vec::new();
    for (req, n) in outbound {
        if n > 1 {
            violations.push(format!("req {req}: {n} outbound migrations"));
        }
    }
    for (req, n) in returns {
        if n > 1 {
            violations.push(format!("req {req}: {n} return migrations"));
        }
    }
    violations
}

/// Removal permanence: after the removal escalation reaches the proxy, every
/// later authentication for that user is rejected and the user gate is never
/// consulted again.
///
/// The trace does not carry the principal in its summary fields, so the user
/// behind a removal notice is recovered through that request's `AuthSubmit`
/// sender (`interface/<user>`).
pub fn scan_removal_permanence(trace: &Trace) -> Vec<String> {
    let mut req_user: BTreeMap<RequestId, String> = BTreeMap::new();
    for ev in trace.delivered() {
        if ev.msg_type == MsgType::AuthSubmit {
            if let Some(user) = interface_user(&ev.from.0) {
                req_user.entry(ev.req_id).or_insert_with(|| user.to_string());
            }
        }
    }

    // user -> trace seq at which the proxy learned of the removal
    let mut removed_at: BTreeMap<String, u64> = BTreeMap::new();
    for ev in trace.delivered() {
        if ev.tampered {
            continue;
        }
        if ev.msg_type == MsgType::BreachNotice
            && ev.removal == Some(true)
            && ev.to.role() == Role::Proxy
        {
            if let Some(user) = req_user.get(&ev.req_id) {
                removed_at.entry(user.clone()).or_insert(ev.seq);
            }
        }
    }
    if removed_at.is_empty() {
        return Vec::new();
    }

    let mut violations = Vec::new();
    let mut post_removal_reqs: BTreeSet<RequestId> = BTreeSet::new();
    for ev in trace.delivered() {
        if ev.tampered {
            continue;
        }
        match ev.msg_type {
            MsgType::AuthSubmit => {
                let user = interface_user(&ev.from.0);
                if let Some(&at) = user.and_then(|u| removed_at.get(u)) {
                    if ev.seq > at {
                        post_removal_reqs.insert(ev.req_id);
                    }
                }
            }
            MsgType::TrustQueryUser if post_removal_reqs.contains(&ev.req_id) => {
                violations.push(format!(
                    "req {}: user gate consulted at event {} for a removed user",
                    ev.req_id, ev.seq
                ));
            }
            MsgType::DeliverResult if post_removal_reqs.contains(&ev.req_id) => {
                violations.push(format!(
                    "req {}: result delivered at event {} to a removed user",
                    ev.req_id, ev.seq
                ));
            }
            _ => {}
        }
    }
    violations
}

fn interface_user(endpoint: &str) -> Option<&str> {
    endpoint.strip_prefix("interface/")
}

/// Breach immediacy: every malicious outcome that was actually served must
/// have a breach notice *sent* by the domain trust agent at the very same
/// simulated time as the service call delivery that triggered it.
pub fn scan_breach_immediacy(
    trace: &Trace,
    outcomes: &BTreeMap<RequestId, ActionKind>,
) -> Vec<String> {
    let mut violations = Vec::new();
    for (req, outcome) in outcomes {
        if *outcome != ActionKind::Malicious {
            continue;
        }
        let serve_times: Vec<u64> = trace
            .delivered()
            .filter(|e| e.req_id == *req && e.msg_type == MsgType::ServiceCall && !e.tampered)
            .map(|e| e.at)
            .collect();
        for at in serve_times {
            let notice_same_cycle = trace.events.iter().any(|e| {
                e.event == NetEvent::Sent
                    && e.msg_type == MsgType::BreachNotice
                    && e.from.role() == Role::Dta
                    && e.req_id == *req
                    && e.at == at
                    && e.severity == Some(ActionKind::Malicious)
            });
            if !notice_same_cycle {
                violations.push(format!(
                    "req {req}: malicious task served at {at} without a same-cycle breach notice"
                ));
            }
        }
    }
    violations
}

/// The exact delivered-envelope multiset of a clean granted request.
pub fn expected_grant_multiset() -> BTreeMap<MsgType, u32> {
    [
        (MsgType::AuthSubmit, 1),
        (MsgType::AuthResult, 1),
        (MsgType::TrustQueryUser, 1),
        (MsgType::TrustReplyUser, 1),
        (MsgType::MigrateOut, 1),
        (MsgType::DomainTrustQuery, 1),
        (MsgType::DomainTrustReply, 1),
        (MsgType::ServiceCall, 1),
        (MsgType::ServiceResult, 1),
        (MsgType::MigrateBack, 1),
        (MsgType::DeliverResult, 1),
        (MsgType::BreachNotice, 1),
    ]
    .into_iter()
    .collect()
}

pub fn delivered_multiset(trace: &Trace, req: RequestId) -> BTreeMap<MsgType, u32> {
    let mut counts = BTreeMap::new();
    for ev in trace.delivered() {
        if ev.req_id == req {
            *counts.entry(ev.msg_type).or_insert(0) += 1;
        }
    }
    counts
}

/// Message budget: under zero faults, a granted request with a positive
/// outcome delivers exactly the twelve-envelope reference multiset.
pub fn scan_message_budget(trace: &Trace, granted_positive: &[RequestId]) -> Vec<String> {
    let expected = expected_grant_multiset();
    let mut violations = Vec::new();
    for req in granted_positive {
        let got = delivered_multiset(trace, *req);
        let total: u32 = got.values().sum();
        if got != expected {
            violations.push(format!(
                "req {req}: delivered multiset {got:?} ({total} envelopes) differs from the 12-envelope reference"
            ));
        }
    }
    violations
}

/// All always-on security scans bundled; returns every violation found.
pub fn security_violations(trace: &Trace, outcomes: &BTreeMap<RequestId, ActionKind>) -> Vec<String> {
    let mut all = scan_gate_soundness(trace);
    all.extend(scan_ma_migrations(trace));
    all.extend(scan_removal_permanence(trace));
    all.extend(scan_breach_immediacy(trace, outcomes));
    all
}
