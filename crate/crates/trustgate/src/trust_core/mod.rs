//! The trust model: action ledgers, the action-probability function, the
//! smoothed trust value, classification, and the removal policy.
//!
//! A principal (a user at its trust agent, a domain at the domain trust
//! agent) accumulates [`ActionRecord`]s in a [`TrustLedger`]. After each
//! recorded action the probability of a positive action is
//!
//! ```text
//! Pa = (1 - Na / total_a) * Wa^l
//! ```
//!
//! where `Na` counts negative actions (wrong and malicious alike), `total_a`
//! counts all actions, `Wa` is the weight of the action just performed, and
//! `l >= 1` is the security level amplifying the penalty of low-weight
//! actions. `Pa` then feeds the exponential moving average that is the
//! principal's trust value, and the value is classified against two
//! thresholds. Repeated malicious actions trip the removal policy.
//!
//! Everything here is a pure function over value-semantics state; agents own
//! their ledgers exclusively.

mod db;

pub use db::{SnapshotError, TrustDb, TrustRecord, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrustError {
    #[error("ledger holds no actions; use initial_trust instead")]
    EmptyLedger,
    #[error("action weight {0} outside [0, 1]")]
    InvalidWeight(f64),
    #[error("non-trusted bound {nontrusted_max} must lie below trusted bound {trusted_min}")]
    InvalidThresholds { trusted_min: f64, nontrusted_max: f64 },
    #[error("principal is removed; trust can no longer change")]
    RemovedPrincipal,
}

/// The nature of one performed task.
///
/// Wrong and malicious actions both count as negative for the past-behavior
/// ratio; they differ in weight (and only malicious actions feed the removal
/// streak).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Positive,
    Wrong,
    Malicious,
}

impl ActionKind {
    pub fn is_negative(self) -> bool {
        !matches!(self, ActionKind::Positive)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Positive => "positive",
            ActionKind::Wrong => "wrong",
            ActionKind::Malicious => "malicious",
        }
    }
}

impl std::fmt::Display for ActionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One performed task: its nature, its weight at the time it was recorded,
/// and its position in the ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub kind: ActionKind,
    /// Weight in [0, 1], taken from the params for the action's kind.
    pub weight: f64,
    /// Ledger-local event index, strictly increasing.
    pub seq: u64,
}

/// Per-principal evidence: negative and total counters plus the full history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrustLedger {
    pub negatives: u64,
    pub total: u64,
    pub history: Vec<ActionRecord>,
}

impl TrustLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// The recorded kinds in order; the realized action sequence of this
    /// principal.
    pub fn kinds(&self) -> Vec<ActionKind> {
        self.history.iter().map(|r| r.kind).collect()
    }

    /// Checks the structural invariants (used by the snapshot loader and by
    /// property tests).
    pub fn invariants_hold(&self) -> bool {
        self.total == self.history.len() as u64
            && self.negatives == self.history.iter().filter(|r| r.kind.is_negative()).count() as u64
            && self.negatives <= self.total
            && self.history.iter().all(|r| (0.0..=1.0).contains(&r.weight))
            && self.history.windows(2).all(|w| w[0].seq < w[1].seq)
    }
}

/// Model parameters. Weights must respect the severity ordering
/// `malicious <= wrong <= positive`; the security level is at least 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustParams {
    /// Security level `l >= 1`; exponent on the action weight.
    pub level: u32,
    pub weight_positive: f64,
    pub weight_wrong: f64,
    pub weight_malicious: f64,
    /// EMA retention: value' = alpha * value + (1 - alpha) * Pa.
    pub smoothing_alpha: f64,
    /// Trust assigned to a principal before its first action.
    pub initial_trust: f64,
    /// User-tier gate: requests pass iff trust >= user_threshold.
    pub user_threshold: f64,
    /// Consecutive malicious actions that trigger removal.
    pub removal_streak: u32,
    /// Classification bound: Trusted iff value >= trusted_min.
    pub trusted_min: f64,
    /// Classification bound: NonTrusted iff value < nontrusted_max.
    pub nontrusted_max: f64,
}

impl Default for TrustParams {
    fn default() -> Self {
        TrustParams {
            level: 1,
            weight_positive: 1.0,
            weight_wrong: 0.5,
            weight_malicious: 0.1,
            smoothing_alpha: 0.5,
            initial_trust: 0.5,
            user_threshold: 0.5,
            removal_streak: 3,
            trusted_min: 0.7,
            nontrusted_max: 0.3,
        }
    }
}

impl TrustParams {
    pub fn weight_for(&self, kind: ActionKind) -> f64 {
        match kind {
            ActionKind::Positive => self.weight_positive,
            ActionKind::Wrong => self.weight_wrong,
            ActionKind::Malicious => self.weight_malicious,
        }
    }

    /// Field-level validation; returns every problem, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.level < 1 {
            errs.push("level must be >= 1".into());
        }
        for (name, v) in [
            ("weight_positive", self.weight_positive),
            ("weight_wrong", self.weight_wrong),
            ("weight_malicious", self.weight_malicious),
            ("smoothing_alpha", self.smoothing_alpha),
            ("initial_trust", self.initial_trust),
            ("user_threshold", self.user_threshold),
            ("trusted_min", self.trusted_min),
            ("nontrusted_max", self.nontrusted_max),
        ] {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.weight_malicious <= self.weight_wrong && self.weight_wrong <= self.weight_positive)
        {
            errs.push("weights must satisfy malicious <= wrong <= positive".into());
        }
        if self.removal_streak < 1 {
            errs.push("removal_streak must be >= 1".into());
        }
        if self.nontrusted_max >= self.trusted_min {
            errs.push("nontrusted_max must be < trusted_min".into());
        }
        errs
    }
}

/// Trust classification partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustClass {
    Trusted,
    Innocent,
    NonTrusted,
}

impl std::fmt::Display for TrustClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrustClass::Trusted => "trusted",
            TrustClass::Innocent => "innocent",
            TrustClass::NonTrusted => "non_trusted",
        })
    }
}

/// Current trust of one principal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustState {
    pub value: f64,
    pub class: TrustClass,
    /// Consecutive malicious actions; reset by any other kind.
    pub malicious_streak: u32,
    pub removed: bool,
}

impl TrustState {
    /// Fresh principal at the configured initial trust.
    pub fn initial(params: &TrustParams) -> Self {
        TrustState {
            value: params.initial_trust,
            class: classify(params.initial_trust, params.trusted_min, params.nontrusted_max)
                .expect("validated params"),
            malicious_streak: 0,
            removed: false,
        }
    }

    pub fn invariants_hold(&self) -> bool {
        (0.0..=1.0).contains(&self.value) && (!self.removed || self.class == TrustClass::NonTrusted)
    }
}

/// Probability of a positive action: `(1 - Na/total_a) * weight^level`.
///
/// Defined only when the ledger holds at least one action; callers fall back
/// to `initial_trust` for fresh principals.
pub fn action_probability(ledger: &TrustLedger, weight: f64, level: u32) -> Result<f64, TrustError> {
    if ledger.total == 0 {
        return Err(TrustError::EmptyLedger);
    }
    if !(0.0..=1.0).contains(&weight) {
        return Err(TrustError::InvalidWeight(weight));
    }
    let past = 1.0 - ledger.negatives as f64 / ledger.total as f64;
    let pa = past * weight.powi(level as i32);
    debug_assert!((0.0..=1.0).contains(&pa));
    Ok(pa)
}

/// Appends one action to the ledger, maintaining the counters.
pub fn record_action(ledger: &mut TrustLedger, kind: ActionKind, params: &TrustParams) {
    let seq = ledger.total;
    ledger.history.push(ActionRecord { kind, weight: params.weight_for(kind), seq });
    ledger.total += 1;
    if kind.is_negative() {
        ledger.negatives += 1;
    }
}

/// Folds a freshly computed `Pa` into the trust value and reclassifies.
///
/// `kind` is the action that triggered the recalculation; it drives the
/// malicious streak. Removed principals are frozen.
pub fn update_trust(
    state: &TrustState,
    pa: f64,
    kind: ActionKind,
    params: &TrustParams,
) -> Result<TrustState, TrustError> {
    if state.removed {
        return Err(TrustError::RemovedPrincipal);
    }
    if !(0.0..=1.0).contains(&pa) {
        return Err(TrustError::InvalidWeight(pa));
    }
    let alpha = params.smoothing_alpha;
    // clamp guards the convex combination against end-point rounding
    let value = (alpha * state.value + (1.0 - alpha) * pa).clamp(0.0, 1.0);
    Ok(TrustState {
        value,
        class: classify(value, params.trusted_min, params.nontrusted_max)?,
        malicious_streak: if kind == ActionKind::Malicious { state.malicious_streak + 1 } else { 0 },
        removed: false,
    })
}

/// Partition a trust value: `Trusted` iff `value >= trusted_min`,
/// `NonTrusted` iff `value < nontrusted_max`, `Innocent` between.
pub fn classify(value: f64, trusted_min: f64, nontrusted_max: f64) -> Result<TrustClass, TrustError> {
    if nontrusted_max >= trusted_min {
        return Err(TrustError::InvalidThresholds { trusted_min, nontrusted_max });
    }
    Ok(if value >= trusted_min {
        TrustClass::Trusted
    } else if value < nontrusted_max {
        TrustClass::NonTrusted
    } else {
        TrustClass::Innocent
    })
}

/// Removal policy: trip once the malicious streak reaches the configured
/// length.
pub fn should_remove(state: &TrustState, params: &TrustParams) -> bool {
    state.malicious_streak >= params.removal_streak
}

/// Records an action and folds the resulting `Pa` into the state in one
/// step; the bookkeeping every trust agent performs per observed task.
pub fn apply_action(
    ledger: &mut TrustLedger,
    state: &TrustState,
    kind: ActionKind,
    params: &TrustParams,
) -> Result<TrustState, TrustError> {
    if state.removed {
        return Err(TrustError::RemovedPrincipal);
    }
    record_action(ledger, kind, params);
    let pa = action_probability(ledger, params.weight_for(kind), params.level)?;
    update_trust(state, pa, kind, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger_with(negatives: u64, total: u64) -> TrustLedger {
        let params = TrustParams::default();
        let mut ledger = TrustLedger::new();
        for i in 0..total {
            let kind = if i < negatives { ActionKind::Wrong } else { ActionKind::Positive };
            record_action(&mut ledger, kind, &params);
        }
        ledger
    }

    #[test]
    fn probability_no_negatives_full_weight() {
        let ledger = ledger_with(0, 5);
        assert_eq!(action_probability(&ledger, 1.0, 1).unwrap(), 1.0);
    }

    #[test]
    fn probability_all_negative_zeroes_past_term() {
        let ledger = ledger_with(5, 5);
        assert_eq!(action_probability(&ledger, 1.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn probability_hand_evaluated() {
        // (1 - 2/10) * 0.5^2 = 0.8 * 0.25 = 0.2
        let ledger = ledger_with(2, 10);
        let pa = action_probability(&ledger, 0.5, 2).unwrap();
        assert!((pa - 0.2).abs() < 1e-15);
    }

    #[test]
    fn probability_zero_weight_annihilates() {
        let ledger = ledger_with(1, 4);
        assert_eq!(action_probability(&ledger, 0.0, 3).unwrap(), 0.0);
    }

    #[test]
    fn probability_empty_ledger_errors() {
        let ledger = TrustLedger::new();
        assert_eq!(action_probability(&ledger, 1.0, 1), Err(TrustError::EmptyLedger));
    }

    #[test]
    fn probability_rejects_out_of_range_weight() {
        let ledger = ledger_with(0, 1);
        assert_eq!(action_probability(&ledger, 1.5, 1), Err(TrustError::InvalidWeight(1.5)));
        assert_eq!(action_probability(&ledger, -0.1, 1), Err(TrustError::InvalidWeight(-0.1)));
    }

    #[test]
    fn record_first_action() {
        let mut ledger = TrustLedger::new();
        record_action(&mut ledger, ActionKind::Positive, &TrustParams::default());
        assert_eq!((ledger.negatives, ledger.total), (0, 1));
        assert!(ledger.invariants_hold());
    }

    #[test]
    fn record_malicious_increments_negatives() {
        let mut ledger = ledger_with(1, 3);
        record_action(&mut ledger, ActionKind::Malicious, &TrustParams::default());
        assert_eq!((ledger.negatives, ledger.total), (2, 4));
        assert!(ledger.invariants_hold());
    }

    #[test]
    fn record_wrong_counts_as_negative() {
        let mut ledger = ledger_with(0, 2);
        record_action(&mut ledger, ActionKind::Wrong, &TrustParams::default());
        assert_eq!((ledger.negatives, ledger.total), (1, 3));
    }

    #[test]
    fn update_fixed_point() {
        let params = TrustParams::default();
        let state = TrustState { value: 0.5, class: TrustClass::Innocent, malicious_streak: 0, removed: false };
        let next = update_trust(&state, 0.5, ActionKind::Positive, &params).unwrap();
        assert_eq!(next.value, 0.5);
    }

    #[test]
    fn update_midpoint() {
        let params = TrustParams::default();
        let state = TrustState { value: 1.0, class: TrustClass::Trusted, malicious_streak: 0, removed: false };
        let next = update_trust(&state, 0.0, ActionKind::Wrong, &params).unwrap();
        assert_eq!(next.value, 0.5);
    }

    #[test]
    fn update_hand_evaluated_ema() {
        // 0.25 * 0.8 + 0.75 * 0.2 = 0.35
        let params = TrustParams { smoothing_alpha: 0.25, ..TrustParams::default() };
        let state = TrustState { value: 0.8, class: TrustClass::Trusted, malicious_streak: 0, removed: false };
        let next = update_trust(&state, 0.2, ActionKind::Positive, &params).unwrap();
        assert!((next.value - 0.35).abs() < 1e-12);
    }

    #[test]
    fn update_tracks_malicious_streak() {
        let params = TrustParams::default();
        let s0 = TrustState::initial(&params);
        let s1 = update_trust(&s0, 0.0, ActionKind::Malicious, &params).unwrap();
        let s2 = update_trust(&s1, 0.0, ActionKind::Malicious, &params).unwrap();
        assert_eq!(s2.malicious_streak, 2);
        let s3 = update_trust(&s2, 1.0, ActionKind::Positive, &params).unwrap();
        assert_eq!(s3.malicious_streak, 0);
    }

    #[test]
    fn update_refuses_removed_principal() {
        let params = TrustParams::default();
        let state = TrustState { value: 0.1, class: TrustClass::NonTrusted, malicious_streak: 3, removed: true };
        assert_eq!(
            update_trust(&state, 0.5, ActionKind::Positive, &params),
            Err(TrustError::RemovedPrincipal)
        );
    }

    #[test]
    fn classify_partition() {
        assert_eq!(classify(0.9, 0.7, 0.3).unwrap(), TrustClass::Trusted);
        assert_eq!(classify(0.5, 0.7, 0.3).unwrap(), TrustClass::Innocent);
        assert_eq!(classify(0.1, 0.7, 0.3).unwrap(), TrustClass::NonTrusted);
    }

    #[test]
    fn classify_trusted_boundary_inclusive() {
        assert_eq!(classify(0.7, 0.7, 0.3).unwrap(), TrustClass::Trusted);
        // the non-trusted bound is exclusive from below
        assert_eq!(classify(0.3, 0.7, 0.3).unwrap(), TrustClass::Innocent);
    }

    #[test]
    fn classify_rejects_inverted_thresholds() {
        assert!(matches!(classify(0.5, 0.3, 0.7), Err(TrustError::InvalidThresholds { .. })));
        assert!(matches!(classify(0.5, 0.5, 0.5), Err(TrustError::InvalidThresholds { .. })));
    }

    #[test]
    fn removal_threshold_comparison() {
        let params = TrustParams::default(); // removal_streak = 3
        let mk = |streak| TrustState {
            value: 0.1,
            class: TrustClass::NonTrusted,
            malicious_streak: streak,
            removed: false,
        };
        assert!(should_remove(&mk(3), &params));
        assert!(!should_remove(&mk(0), &params));
        assert!(!should_remove(&mk(2), &params));
    }

    #[test]
    fn default_params_are_valid() {
        assert!(TrustParams::default().validate().is_empty());
    }

    #[test]
    fn params_validation_reports_each_problem() {
        let params = TrustParams {
            level: 0,
            weight_positive: 0.2,
            weight_wrong: 0.5,
            weight_malicious: 0.9,
            nontrusted_max: 0.8,
            trusted_min: 0.7,
            ..TrustParams::default()
        };
        let errs = params.validate();
        assert!(errs.iter().any(|e| e.contains("level")));
        assert!(errs.iter().any(|e| e.contains("malicious <= wrong <= positive")));
        assert!(errs.iter().any(|e| e.contains("nontrusted_max")));
    }
}
