//! Trustgate: a deterministic simulator and library for two-tier trust-gated
//! cloud service access.
//!
//! The library has five layers:
//!
//! - [`trust_core`] — the pure trust model: per-principal action ledgers, the
//!   action-probability function, the smoothed trust value, classification
//!   into trusted / innocent / non-trusted, and the removal policy. Also the
//!   versioned `TGDB` snapshot format for trust databases.
//! - [`protocol`] — the envelope schema, the canonical wire codec, the keyed
//!   integrity seal that stands in for a secure channel, the network trace,
//!   and the sequence conformance checker.
//! - [`agents`] — the five agent state machines (interface, proxy, mobile
//!   agent host, user trust agent, domain trust agent) plus a stub service
//!   provider. Agents react only to delivered envelopes, timers, and
//!   co-located observation notes.
//! - [`simnet`] — a deterministic discrete-event message transport with
//!   seeded fault injection (drop, duplication, tamper, latency).
//! - [`harness`] — scenario configuration, behavior profiles, the
//!   independent trust oracle, metrics, and trace-level invariant checks.
//!
//! Every run is a pure function of (scenario, seed): identical inputs produce
//! byte-identical traces and metrics.

pub mod agents;
pub mod harness;
pub mod protocol;
pub mod simnet;
pub mod trust_core;

mod bytesio;

pub use harness::{run_scenario, RunOutput, Scenario};
pub use protocol::{Envelope, MsgType, PrincipalId, Trace};
pub use trust_core::{ActionKind, TrustClass, TrustLedger, TrustParams, TrustState};
