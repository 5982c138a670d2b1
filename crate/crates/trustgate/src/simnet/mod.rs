//! Deterministic discrete-event transport connecting agent endpoints.
//!
//! The engine owns a single event queue keyed by `(deliver_time, tiebreak)`;
//! pop order is total, so identical (scenario, seed) pairs replay identical
//! event sequences. Agents never see the queue: they are invoked with
//! delivered envelopes, their own timers, and co-located observation notes,
//! and they emit effects (sends, timers, notes) through [`Ctx`].
//!
//! Faults are applied at send time per the [`FaultPlan`]: a send is dropped,
//! delivered once, or delivered twice, each copy after an independently drawn
//! latency; a tampered send has one payload byte corrupted in transit, which
//! the receiver's seal check will catch.

pub mod fault;

pub use fault::{FaultPlan, FaultRoller, SendFate};

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::codec::{encode, payload_region};
use crate::protocol::trace::{NetEvent, Trace, TraceEvent};
use crate::protocol::{Envelope, EndpointId, Payload, PrincipalId, RequestId, SealTag};
use crate::trust_core::ActionKind;

pub type SimTime = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("endpoint `{0}` is not registered")]
    UnknownEndpoint(EndpointId),
}

/// Agent-defined timer identity; the engine hands it back untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TimerKey(pub u64);

/// Co-located observation passed between agents on the same site without a
/// network message (the provider-side monitoring tap).
#[derive(Debug, Clone, PartialEq)]
pub struct SiteNote {
    pub req_id: RequestId,
    pub principal: PrincipalId,
    pub outcome: ActionKind,
}

/// What an agent can react to.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentEvent {
    /// Raw envelope bytes as they arrived; the receiver decodes and verifies
    /// the seal itself.
    Delivered { bytes: Vec<u8>, tampered: bool },
    Timer { key: TimerKey },
    Note { note: SiteNote },
}

enum Effect {
    Send { from: EndpointId, to: EndpointId, req_id: RequestId, payload: Payload, seal: SealTag },
    Timer { endpoint: EndpointId, delay: u64, key: TimerKey },
    Note { to: EndpointId, note: SiteNote },
}

/// Effect collector handed to agents during dispatch.
pub struct Ctx {
    now: SimTime,
    self_endpoint: EndpointId,
    effects: Vec<Effect>,
}

impl Ctx {
    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Queues an already-sealed payload for sending from this agent.
    pub fn send(&mut self, to: EndpointId, req_id: RequestId, payload: Payload, seal: SealTag) {
        self.effects.push(Effect::Send {
            from: self.self_endpoint.clone(),
            to,
            req_id,
            payload,
            seal,
        });
    }

    /// Arms a timer for this agent, `delay >= 1` units from now.
    pub fn arm_timer(&mut self, delay: u64, key: TimerKey) {
        self.effects.push(Effect::Timer {
            endpoint: self.self_endpoint.clone(),
            delay: delay.max(1),
            key,
        });
    }

    /// Synchronous same-site observation; handled in the current event cycle.
    pub fn note(&mut self, to: EndpointId, note: SiteNote) {
        self.effects.push(Effect::Note { to, note });
    }
}

/// The set of agents driven by the engine. The harness implements this with
/// typed agent storage so post-run introspection needs no downcasts.
pub trait World {
    fn dispatch(&mut self, endpoint: &EndpointId, ctx: &mut Ctx, event: AgentEvent);
}

/// Transport counters; at quiescence `delivered + dropped == sent + duplicated`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub duplicated: u64,
    pub tampered: u64,
}

impl SimStats {
    pub fn conservation_holds(&self) -> bool {
        self.delivered + self.dropped == self.sent + self.duplicated
    }
}

enum Queued {
    Deliver { envelope: Envelope, bytes: Vec<u8>, tampered: bool },
    Timer { endpoint: EndpointId, key: TimerKey },
}

/// The discrete-event engine.
pub struct SimNet {
    now: SimTime,
    queue: BTreeMap<(SimTime, u64), Queued>,
    tie: u64,
    env_seq: u64,
    trace_seq: u64,
    trace: Trace,
    endpoints: BTreeSet<EndpointId>,
    roller: FaultRoller,
    stats: SimStats,
    errors: Vec<String>,
}

impl SimNet {
    pub fn new(plan: FaultPlan) -> Self {
        SimNet {
            now: 0,
            queue: BTreeMap::new(),
            tie: 0,
            env_seq: 0,
            trace_seq: 0,
            trace: Trace::new(),
            endpoints: BTreeSet::new(),
            roller: FaultRoller::new(plan),
            stats: SimStats::default(),
            errors: Vec::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn register_endpoint(&mut self, endpoint: EndpointId) {
        self.endpoints.insert(endpoint);
    }

    pub fn stats(&self) -> SimStats {
        self.stats
    }

    /// Internal errors observed while running (misrouted effects and the
    /// like); a non-empty list means the scenario wiring is broken.
    pub fn errors(&self) -> &[String] {
        &self.errors
    }

    /// Seeds a timer before or during a run; used by the harness for the
    /// request schedule.
    pub fn schedule_timer(&mut self, at: SimTime, endpoint: EndpointId, key: TimerKey) {
        let at = at.max(self.now);
        let tie = self.next_tie();
        self.queue.insert((at, tie), Queued::Timer { endpoint, key });
    }

    /// Sends an envelope through the fault plan, scheduling zero, one, or two
    /// deliveries.
    pub fn send(
        &mut self,
        from: EndpointId,
        to: EndpointId,
        req_id: RequestId,
        payload: Payload,
        seal: SealTag,
    ) -> Result<(), SimError> {
        if !self.endpoints.contains(&from) {
            return Err(SimError::UnknownEndpoint(from));
        }
        if !self.endpoints.contains(&to) {
            return Err(SimError::UnknownEndpoint(to));
        }
        let envelope = Envelope { seq: self.next_env_seq(), req_id, from, to, payload, seal };
        let bytes = encode(&envelope);
        self.record(NetEvent::Sent, &envelope, false);
        self.stats.sent += 1;

        let fate = self.roller.roll_send();
        if fate.dropped {
            self.record(NetEvent::Dropped, &envelope, false);
            self.stats.dropped += 1;
            return Ok(());
        }
        let bytes = if fate.tampered {
            self.stats.tampered += 1;
            let region = payload_region(&bytes).expect("self-encoded frame");
            let offset = region.start + self.roller.roll_tamper_offset(region.len());
            let mut corrupted = bytes;
            corrupted[offset] ^= 0xA5;
            corrupted
        } else {
            bytes
        };
        let copies = if fate.duplicated {
            self.stats.duplicated += 1;
            2
        } else {
            1
        };
        for _ in 0..copies {
            let latency = self.roller.roll_latency();
            let tie = self.next_tie();
            self.queue.insert(
                (self.now + latency, tie),
                Queued::Deliver {
                    envelope: envelope.clone(),
                    bytes: bytes.clone(),
                    tampered: fate.tampered,
                },
            );
        }
        Ok(())
    }

    /// Runs the event loop until the queue drains or `max_time` is passed,
    /// returning the completed trace.
    pub fn run_until_quiescent<W: World>(&mut self, world: &mut W, max_time: SimTime) -> Trace {
        while let Some((&(at, tie), _)) = self.queue.iter().next() {
            if at > max_time {
                self.trace.max_time_exceeded = true;
                break;
            }
            let item = self.queue.remove(&(at, tie)).expect("peeked key exists");
            debug_assert!(at >= self.now, "time must not run backwards");
            self.now = at;
            match item {
                Queued::Deliver { envelope, bytes, tampered } => {
                    self.record(NetEvent::Delivered, &envelope, tampered);
                    self.stats.delivered += 1;
                    let to = envelope.to.clone();
                    self.dispatch(world, to, AgentEvent::Delivered { bytes, tampered });
                }
                Queued::Timer { endpoint, key } => {
                    self.dispatch(world, endpoint, AgentEvent::Timer { key });
                }
            }
        }
        std::mem::take(&mut self.trace)
    }

    /// Invokes one agent and works through the effects it (and any same-cycle
    /// notes it triggers) produce.
    fn dispatch<W: World>(&mut self, world: &mut W, endpoint: EndpointId, event: AgentEvent) {
        let mut pending: VecDeque<(EndpointId, AgentEvent)> = VecDeque::new();
        pending.push_back((endpoint, event));
        while let Some((ep, ev)) = pending.pop_front() {
            let mut ctx = Ctx { now: self.now, self_endpoint: ep, effects: Vec::new() };
            world.dispatch(&ctx.self_endpoint.clone(), &mut ctx, ev);
            for effect in ctx.effects {
                match effect {
                    Effect::Send { from, to, req_id, payload, seal } => {
                        if let Err(e) = self.send(from, to, req_id, payload, seal) {
                            self.errors.push(format!("at {}: {e}", self.now));
                        }
                    }
                    Effect::Timer { endpoint, delay, key } => {
                        let tie = self.next_tie();
                        self.queue.insert((self.now + delay, tie), Queued::Timer { endpoint, key });
                    }
                    Effect::Note { to, note } => {
                        if self.endpoints.contains(&to) {
                            pending.push_back((to, AgentEvent::Note { note }));
                        } else {
                            self.errors.push(format!("note to unknown endpoint `{to}`"));
                        }
                    }
                }
            }
        }
    }

    fn record(&mut self, kind: NetEvent, envelope: &Envelope, tampered: bool) {
        let seq = self.trace_seq;
        self.trace_seq += 1;
        self.trace.events.push(TraceEvent::summarize(seq, self.now, kind, envelope, tampered));
    }

    fn next_tie(&mut self) -> u64 {
        let t = self.tie;
        self.tie += 1;
        t
    }

    fn next_env_seq(&mut self) -> u64 {
        let s = self.env_seq;
        self.env_seq += 1;
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::codec::{encode_payload, open_received};
    use crate::protocol::seal::{seal, ChannelKey};
    use crate::protocol::MsgType;

    const KEY: u64 = 11;

    fn key() -> ChannelKey {
        ChannelKey::derive(KEY, "test-link")
    }

    /// Two endpoints: `a` pings on a timer, `b` counts what it accepts.
    struct PingWorld {
        a: EndpointId,
        b: EndpointId,
        accepted: u32,
        rejected: u32,
    }

    impl PingWorld {
        fn new() -> Self {
            PingWorld {
                a: EndpointId::new("test/a"),
                b: EndpointId::new("test/b"),
                accepted: 0,
                rejected: 0,
            }
        }
    }

    impl World for PingWorld {
        fn dispatch(&mut self, endpoint: &EndpointId, ctx: &mut Ctx, event: AgentEvent) {
            if *endpoint == self.a {
                if let AgentEvent::Timer { .. } = event {
                    let payload = Payload::TrustQueryUser {
                        principal: PrincipalId::new("u", "d"),
                    };
                    let tag = seal(&encode_payload(&payload), &key());
                    ctx.send(self.b.clone(), RequestId(0), payload, tag);
                }
            } else if *endpoint == self.b {
                if let AgentEvent::Delivered { bytes, .. } = event {
                    match open_received(&bytes, &key()) {
                        Ok(_) => self.accepted += 1,
                        Err(_) => self.rejected += 1,
                    }
                }
            }
        }
    }

    fn run_with(plan: FaultPlan) -> (PingWorld, Trace, SimStats) {
        let mut world = PingWorld::new();
        let mut net = SimNet::new(plan);
        net.register_endpoint(world.a.clone());
        net.register_endpoint(world.b.clone());
        net.schedule_timer(0, world.a.clone(), TimerKey(1));
        let trace = net.run_until_quiescent(&mut world, 1_000);
        let stats = net.stats();
        (world, trace, stats)
    }

    #[test]
    fn zero_fault_single_delivery_at_min_latency() {
        let (world, trace, stats) = run_with(FaultPlan { latency_min: 3, latency_max: 3, ..FaultPlan::default() });
        assert_eq!(world.accepted, 1);
        assert_eq!(stats.delivered, 1);
        let delivered: Vec<_> = trace.delivered().collect();
        assert_eq!(delivered.len(), 1);
        assert_eq!(delivered[0].at, 3);
        assert_eq!(delivered[0].msg_type, MsgType::TrustQueryUser);
    }

    #[test]
    fn drop_prob_one_delivers_nothing() {
        let (world, trace, stats) = run_with(FaultPlan { drop_prob: 1.0, ..FaultPlan::default() });
        assert_eq!(world.accepted, 0);
        assert_eq!(stats.delivered, 0);
        assert_eq!(stats.dropped, 1);
        assert_eq!(trace.delivered().count(), 0);
        assert!(stats.conservation_holds());
    }

    #[test]
    fn dup_prob_one_delivers_twice() {
        let (world, _, stats) = run_with(FaultPlan { dup_prob: 1.0, ..FaultPlan::default() });
        assert_eq!(world.accepted, 2);
        assert_eq!(stats.delivered, 2);
        assert_eq!(stats.duplicated, 1);
        assert!(stats.conservation_holds());
    }

    #[test]
    fn tampered_delivery_fails_the_seal() {
        let (world, trace, stats) = run_with(FaultPlan { tamper_prob: 1.0, ..FaultPlan::default() });
        assert_eq!(world.accepted, 0);
        assert_eq!(world.rejected, 1);
        assert_eq!(stats.tampered, 1);
        assert!(trace.delivered().all(|e| e.tampered));
    }

    #[test]
    fn same_seed_identical_trace_bytes() {
        let plan = FaultPlan {
            seed: 42,
            drop_prob: 0.2,
            dup_prob: 0.2,
            tamper_prob: 0.2,
            latency_min: 1,
            latency_max: 5,
        };
        let (_, t1, _) = run_with(plan.clone());
        let (_, t2, _) = run_with(plan);
        assert_eq!(t1.to_jsonl(), t2.to_jsonl());
    }

    #[test]
    fn no_events_no_trace() {
        let mut world = PingWorld::new();
        let mut net = SimNet::new(FaultPlan::default());
        net.register_endpoint(world.a.clone());
        net.register_endpoint(world.b.clone());
        let trace = net.run_until_quiescent(&mut world, 100);
        assert!(trace.is_empty());
        assert!(!trace.max_time_exceeded);
    }

    #[test]
    fn unknown_endpoint_is_an_error() {
        let mut net = SimNet::new(FaultPlan::default());
        net.register_endpoint(EndpointId::new("test/a"));
        let payload = Payload::TrustQueryUser { principal: PrincipalId::new("u", "d") };
        let tag = seal(&encode_payload(&payload), &key());
        let err = net.send(
            EndpointId::new("test/a"),
            EndpointId::new("test/nowhere"),
            RequestId(0),
            payload,
            tag,
        );
        assert!(matches!(err, Err(SimError::UnknownEndpoint(_))));
    }

    #[test]
    fn max_time_flagged_when_budget_exceeded() {
        let mut world = PingWorld::new();
        let mut net = SimNet::new(FaultPlan { latency_min: 50, latency_max: 50, ..FaultPlan::default() });
        net.register_endpoint(world.a.clone());
        net.register_endpoint(world.b.clone());
        net.schedule_timer(0, world.a.clone(), TimerKey(1));
        let trace = net.run_until_quiescent(&mut world, 10);
        assert!(trace.max_time_exceeded);
        assert_eq!(world.accepted, 0);
    }

    #[test]
    fn trace_causality_holds_under_faults() {
        let plan = FaultPlan {
            seed: 3,
            drop_prob: 0.3,
            dup_prob: 0.3,
            tamper_prob: 0.3,
            latency_min: 1,
            latency_max: 4,
        };
        let (_, trace, _) = run_with(plan);
        assert!(trace.invariants_hold());
    }
}
