//! Scenario execution: builds the agent world from a [`Scenario`], drives the
//! simulation to quiescence, and collects the trace, metrics, conformance
//! verdicts, and security-scan results.

pub mod behavior;
pub mod checks;
pub mod oracle;
pub mod scenario;

pub use behavior::{generate_behavior, BehaviorProfile};
pub use oracle::trust_oracle;
pub use scenario::{
    DomainSpec, FaultSpec, Misbehavior, RequestSpec, Scenario, ScenarioError, Timing, UserSpec,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{
    Agent, AuditEntry, CspService, Credential, DomainTrustAgent, InterfaceAgent, Keyring,
    MobileAgentHost, ProxyAgent, TrustUserAgent,
};
use crate::protocol::conformance::{check_conformance, ConformanceReport};
use crate::protocol::seal::ChannelKey;
use crate::protocol::trace::Trace;
use crate::protocol::{EndpointId, MsgType, PrincipalId, RejectStage, RequestId};
use crate::simnet::{AgentEvent, Ctx, SimNet, SimStats, World};
use crate::trust_core::ActionKind;

/// Default gate threshold for domains that appear at the provider without a
/// configured entry (valid scenarios declare all their domains).
pub const DEFAULT_DOMAIN_THRESHOLD: f64 = 0.5;

pub(crate) fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(b"trustgate-subseed");
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn derive_salt(base: u64, user: &str) -> [u8; 16] {
    let mut h = Sha256::new();
    h.update(b"trustgate-salt");
    h.update(base.to_le_bytes());
    h.update(user.as_bytes());
    let digest = h.finalize();
    digest[..16].try_into().expect("16 bytes")
}

/// All agents of one scenario, with typed access for post-run inspection.
pub struct AgentWorld {
    pub interfaces: BTreeMap<EndpointId, InterfaceAgent>,
    pub proxies: BTreeMap<EndpointId, ProxyAgent>,
    pub tuas: BTreeMap<EndpointId, TrustUserAgent>,
    pub ma_host: MobileAgentHost,
    pub dta: DomainTrustAgent,
    pub csp: CspService,
}

impl AgentWorld {
    pub fn tua_for_domain(&self, domain: &str) -> Option<&TrustUserAgent> {
        self.tuas.get(&EndpointId::tua(domain))
    }

    pub fn proxy_for_domain(&self, domain: &str) -> Option<&ProxyAgent> {
        self.proxies.get(&EndpointId::proxy(domain))
    }

    /// Audit logs of every agent, keyed by endpoint.
    pub fn audits(&self) -> BTreeMap<String, Vec<AuditEntry>> {
        let mut out = BTreeMap::new();
        for (ep, a) in &self.interfaces {
            out.insert(ep.0.clone(), a.audit.clone());
        }
        for (ep, a) in &self.proxies {
            out.insert(ep.0.clone(), a.audit.clone());
        }
        for (ep, a) in &self.tuas {
            out.insert(ep.0.clone(), a.audit.clone());
        }
        out.insert(self.ma_host.endpoint().0.clone(), self.ma_host.audit.clone());
        out.insert(self.dta.endpoint().0.clone(), self.dta.audit.clone());
        out.insert(self.csp.endpoint().0.clone(), self.csp.audit.clone());
        out
    }
}

impl World for AgentWorld {
    fn dispatch(&mut self, endpoint: &EndpointId, ctx: &mut Ctx, event: AgentEvent) {
        if let Some(agent) = self.interfaces.get_mut(endpoint) {
            agent.handle(ctx, event);
        } else if let Some(agent) = self.proxies.get_mut(endpoint) {
            agent.handle(ctx, event);
        } else if let Some(agent) = self.tuas.get_mut(endpoint) {
            agent.handle(ctx, event);
        } else if endpoint == self.ma_host.endpoint() {
            self.ma_host.handle(ctx, event);
        } else if endpoint == self.dta.endpoint() {
            self.dta.handle(ctx, event);
        } else if endpoint == self.csp.endpoint() {
            self.csp.handle(ctx, event);
        }
    }
}

/// Per-scenario outcome counters and trust time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scheduled_requests: u64,
    pub granted: u64,
    pub rejected_auth: u64,
    pub rejected_user_gate: u64,
    pub rejected_domain_gate: u64,
    pub rejected_timeout: u64,
    pub rejected_removed: u64,
    pub rejected_busy: u64,
    pub rejected_local_timeout: u64,
    pub unterminated: u64,
    pub breaches_detected: u64,
    pub users_removed: u64,
    pub transport: SimStats,
    pub user_trust_series: BTreeMap<String, Vec<f64>>,
    pub domain_trust_series: BTreeMap<String, Vec<f64>>,
    pub max_time_exceeded: bool,
}

impl Metrics {
    pub fn rejected_total(&self) -> u64 {
        self.rejected_auth
            + self.rejected_user_gate
            + self.rejected_domain_gate
            + self.rejected_timeout
            + self.rejected_removed
            + self.rejected_busy
            + self.rejected_local_timeout
    }

    /// Every scheduled request is granted, rejected somewhere, or (only when
    /// the run was cut short) unterminated.
    pub fn conservation_holds(&self) -> bool {
        self.granted + self.rejected_total() + self.unterminated == self.scheduled_requests
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// Everything a scenario run produces.
pub struct RunOutput {
    pub trace: Trace,
    pub metrics: Metrics,
    pub conformance: ConformanceReport,
    /// Security-property violations found by the trace scans; empty on a
    /// healthy run.
    pub violations: Vec<String>,
    /// Scripted ground-truth outcome per request.
    pub outcomes: BTreeMap<RequestId, ActionKind>,
    pub world: AgentWorld,
    pub sim_errors: Vec<String>,
}

impl RunOutput {
    /// Exit-code policy: violations always gate; conformance gates only when
    /// the scenario injected no faults (fault injection legitimately breaks
    /// the reference order).
    pub fn security_ok(&self, zero_fault: bool) -> bool {
        self.violations.is_empty()
            && self.sim_errors.is_empty()
            && (!zero_fault || self.conformance.all_conformant())
    }
}

fn provision_pair(keyrings: &mut BTreeMap<EndpointId, Keyring>, key_seed: u64, a: &EndpointId, b: &EndpointId) {
    for (from, to) in [(a, b), (b, a)] {
        let key = ChannelKey::derive(key_seed, &format!("{from}->{to}"));
        keyrings.entry(from.clone()).or_default().provision(from.clone(), to.clone(), key);
        keyrings.entry(to.clone()).or_default().provision(from.clone(), to.clone(), key);
    }
}

/// Builds the world and transport for a validated scenario. Also returns the
/// scripted outcome schedule.
pub fn build_world(scenario: &Scenario) -> (AgentWorld, SimNet, BTreeMap<RequestId, ActionKind>) {
    let key_seed = derive_seed(scenario.seed, "channel-keys");
    let ma_host_ep = EndpointId::ma_host();
    let dta_ep = EndpointId::dta();
    let csp_ep = EndpointId::csp();

    // channel provisioning: each agent's security module gets the keys for
    // the links it legitimately uses
    let mut keyrings: BTreeMap<EndpointId, Keyring> = BTreeMap::new();
    for user in &scenario.users {
        let iface = EndpointId::interface(&user.id);
        let proxy = EndpointId::proxy(&user.domain);
        provision_pair(&mut keyrings, key_seed, &iface, &proxy);
    }
    for domain in &scenario.domains {
        let proxy = EndpointId::proxy(&domain.id);
        let tua = EndpointId::tua(&domain.id);
        provision_pair(&mut keyrings, key_seed, &proxy, &tua);
        provision_pair(&mut keyrings, key_seed, &proxy, &ma_host_ep);
        provision_pair(&mut keyrings, key_seed, &dta_ep, &tua);
    }
    provision_pair(&mut keyrings, key_seed, &ma_host_ep, &dta_ep);
    provision_pair(&mut keyrings, key_seed, &ma_host_ep, &csp_ep);

    let mut ring = |ep: &EndpointId| keyrings.entry(ep.clone()).or_default().clone();

    // provider-side agents
    let mut dta = DomainTrustAgent::new(ring(&dta_ep), scenario.params.clone(), DEFAULT_DOMAIN_THRESHOLD);
    for d in &scenario.domains {
        dta.add_domain(&d.id, d.threshold, EndpointId::tua(&d.id));
    }
    let mut ma_host = MobileAgentHost::new(dta_ep.clone(), csp_ep.clone(), ring(&ma_host_ep), scenario.timing.t_timeout);
    ma_host.misbehave_skip_domain_gate = scenario.misbehavior.ma_skip_domain_gate;
    let mut csp = CspService::new(dta_ep.clone(), ring(&csp_ep));

    // domain-side agents
    let mut proxies = BTreeMap::new();
    let mut tuas = BTreeMap::new();
    for d in &scenario.domains {
        let proxy_ep = EndpointId::proxy(&d.id);
        let tua_ep = EndpointId::tua(&d.id);
        let mut proxy = ProxyAgent::new(
            &d.id,
            tua_ep.clone(),
            ma_host_ep.clone(),
            ring(&proxy_ep),
            scenario.timing.t_timeout,
        );
        proxy.misbehave_skip_user_gate = scenario.misbehavior.proxy_skip_user_gate;
        let tua = TrustUserAgent::new(&d.id, proxy_ep.clone(), ring(&tua_ep), scenario.params.clone());
        proxies.insert(proxy_ep, proxy);
        tuas.insert(tua_ep, tua);
    }

    // users: credentials at the proxy, interface agent per user
    let mut interfaces = BTreeMap::new();
    for user in &scenario.users {
        let proxy_ep = EndpointId::proxy(&user.domain);
        let salt = derive_salt(scenario.seed, &user.id);
        proxies
            .get_mut(&proxy_ep)
            .expect("validated domain")
            .add_user(&user.id, Credential::derive(salt, &user.password));
        let iface_ep = EndpointId::interface(&user.id);
        let agent = InterfaceAgent::new(
            PrincipalId::new(&user.id, &user.domain),
            proxy_ep,
            &user.password,
            ring(&iface_ep),
            scenario.timing.interface_timeout,
        );
        interfaces.insert(iface_ep, agent);
    }

    // request schedule: per-user outcome sequences drive the service catalog
    let mut outcomes = BTreeMap::new();
    let mut per_user_counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut user_sequences: BTreeMap<&str, Vec<ActionKind>> = BTreeMap::new();
    for user in &scenario.users {
        let n = scenario.requests.iter().filter(|r| r.user == user.id).count();
        let seed = derive_seed(scenario.seed, &format!("behavior/{}", user.id));
        user_sequences.insert(user.id.as_str(), generate_behavior(&user.profile, seed, n));
    }
    for (index, request) in scenario.requests.iter().enumerate() {
        let req = RequestId(index as u64);
        let k = per_user_counts.entry(request.user.as_str()).or_insert(0);
        let outcome = user_sequences
            .get(request.user.as_str())
            .and_then(|seq| seq.get(*k))
            .copied()
            .unwrap_or(ActionKind::Positive);
        *k += 1;
        outcomes.insert(req, outcome);
        csp.add_entry(req, format!("result:{}", request.body), outcome);
        let iface_ep = EndpointId::interface(&request.user);
        interfaces
            .get_mut(&iface_ep)
            .expect("validated user")
            .add_scheduled(req, &request.body, request.password.clone());
    }

    // transport
    let mut net = SimNet::new(scenario.fault_plan());
    for ep in interfaces.keys().chain(proxies.keys()).chain(tuas.keys()) {
        net.register_endpoint(ep.clone());
    }
    net.register_endpoint(ma_host_ep);
    net.register_endpoint(dta_ep);
    net.register_endpoint(csp_ep);
    for (index, request) in scenario.requests.iter().enumerate() {
        let req = RequestId(index as u64);
        let iface_ep = EndpointId::interface(&request.user);
        net.schedule_timer(
            request.at,
            iface_ep,
            crate::agents::submit_timer_key(req),
        );
    }

    let world = AgentWorld { interfaces, proxies, tuas, ma_host, dta, csp };
    (world, net, outcomes)
}

fn collect_metrics(
    scenario: &Scenario,
    trace: &Trace,
    world: &AgentWorld,
    stats: SimStats,
) -> Metrics {
    #[derive(Clone, Copy)]
    enum Terminal {
        Granted,
        Rejected(RejectStage),
    }
    let mut terminals: BTreeMap<RequestId, Terminal> = BTreeMap::new();
    for ev in trace.delivered() {
        if ev.tampered || ev.to.role() != crate::protocol::Role::Interface {
            continue;
        }
        match ev.msg_type {
            MsgType::DeliverResult => {
                terminals.entry(ev.req_id).or_insert(Terminal::Granted);
            }
            MsgType::Reject => {
                if let Some(stage) = ev.stage {
                    terminals.entry(ev.req_id).or_insert(Terminal::Rejected(stage));
                }
            }
            _ => {}
        }
    }

    let busy: std::collections::BTreeSet<RequestId> =
        world.interfaces.values().flat_map(|a| a.busy.iter().copied()).collect();
    let local_timeout: std::collections::BTreeSet<RequestId> =
        world.interfaces.values().flat_map(|a| a.local_timed_out.iter().copied()).collect();

    let mut m = Metrics {
        scheduled_requests: scenario.requests.len() as u64,
        granted: 0,
        rejected_auth: 0,
        rejected_user_gate: 0,
        rejected_domain_gate: 0,
        rejected_timeout: 0,
        rejected_removed: 0,
        rejected_busy: 0,
        rejected_local_timeout: 0,
        unterminated: 0,
        breaches_detected: world.dta.notices_sent,
        users_removed: world.tuas.values().map(|t| t.removals).sum(),
        transport: stats,
        user_trust_series: world
            .tuas
            .values()
            .flat_map(|t| t.trust_series().iter().map(|(k, v)| (k.clone(), v.clone())))
            .collect(),
        domain_trust_series: world
            .dta
            .trust_series()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
        max_time_exceeded: trace.max_time_exceeded,
    };

    for index in 0..scenario.requests.len() {
        let req = RequestId(index as u64);
        match terminals.get(&req) {
            Some(Terminal::Granted) => m.granted += 1,
            Some(Terminal::Rejected(stage)) => match stage {
                RejectStage::Auth => m.rejected_auth += 1,
                RejectStage::UserGate => m.rejected_user_gate += 1,
                RejectStage::DomainGate => m.rejected_domain_gate += 1,
                RejectStage::Timeout => m.rejected_timeout += 1,
                RejectStage::Removed => m.rejected_removed += 1,
            },
            None if busy.contains(&req) => m.rejected_busy += 1,
            None if local_timeout.contains(&req) => m.rejected_local_timeout += 1,
            None => m.unterminated += 1,
        }
    }
    m
}

/// Builds a minimal programmatic scenario; tests and generators start here.
pub fn scenario_skeleton(seed: u64) -> Scenario {
    Scenario {
        schema_version: scenario::SCENARIO_SCHEMA_VERSION,
        seed,
        params: Default::default(),
        faults: Default::default(),
        timing: Default::default(),
        misbehavior: Default::default(),
        domains: Vec::new(),
        users: Vec::new(),
        requests: Vec::new(),
    }
}

/// Runs one scenario to quiescence.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, ScenarioError> {
    let problems = scenario.validate();
    if !problems.is_empty() {
        return Err(ScenarioError::Invalid(problems));
    }
    let (mut world, mut net, outcomes) = build_world(scenario);
    log::debug!(
        "running scenario: {} domains, {} users, {} requests, seed {}",
        scenario.domains.len(),
        scenario.users.len(),
        scenario.requests.len(),
        scenario.seed
    );
    let trace = net.run_until_quiescent(&mut world, scenario.timing.max_time);
    let conformance = check_conformance(&trace);
    let metrics = collect_metrics(scenario, &trace, &world, net.stats());
    let violations = checks::security_violations(&trace, &outcomes);
    Ok(RunOutput {
        trace,
        metrics,
        conformance,
        violations,
        outcomes,
        world,
        sim_errors: net.errors().to_vec(),
    })
}
