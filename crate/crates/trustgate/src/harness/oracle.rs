//! Independent straight-line re-derivation of the trust series, used as
//! ground truth against the agents' bookkeeping.
//!
//! This deliberately duplicates the arithmetic instead of calling into the
//! trust model implementation, so a shared bug cannot certify itself: the
//! counters are plain integers here, the weight power is an explicit
//! multiplication loop, and the smoothing update is written out longhand.

use crate::trust_core::{ActionKind, TrustParams};

/// Trust value after each action, starting with the initial trust; the
/// returned series has `actions.len() + 1` entries.
pub fn trust_oracle(actions: &[ActionKind], params: &TrustParams) -> Vec<f64> {
    let mut series = Vec::with_capacity(actions.len() + 1);
    series.push(params.initial_trust);

    let mut negatives: u64 = 0;
    let mut total: u64 = 0;
    let mut value = params.initial_trust;

    for &kind in actions {
        total += 1;
        match kind {
            ActionKind::Positive => {}
            ActionKind::Wrong | ActionKind::Malicious => negatives += 1,
        }
        let weight = match kind {
            ActionKind::Positive => params.weight_positive,
            ActionKind::Wrong => params.weight_wrong,
            ActionKind::Malicious => params.weight_malicious,
        };
        let mut powered = 1.0;
        for _ in 0..params.level {
            powered *= weight;
        }
        let pa = (1.0 - negatives as f64 / total as f64) * powered;

        value = params.smoothing_alpha * value + (1.0 - params.smoothing_alpha) * pa;
        if value > 1.0 {
            value = 1.0;
        }
        if value < 0.0 {
            value = 0.0;
        }
        series.push(value);
    }
    series
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sequence_is_initial_only() {
        let series = trust_oracle(&[], &TrustParams::default());
        assert_eq!(series, vec![0.5]);
    }

    #[test]
    fn single_positive_with_defaults() {
        // Pa = (1 - 0/1) * 1^1 = 1; value = 0.5*0.5 + 0.5*1 = 0.75
        let series = trust_oracle(&[ActionKind::Positive], &TrustParams::default());
        assert_eq!(series.len(), 2);
        assert!((series[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn single_malicious_with_defaults() {
        // Pa = (1 - 1/1) * 0.1 = 0; value = 0.5*0.5 + 0.5*0 = 0.25
        let series = trust_oracle(&[ActionKind::Malicious], &TrustParams::default());
        assert!((series[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn honest_run_converges_upward() {
        let series = trust_oracle(&[ActionKind::Positive; 10], &TrustParams::default());
        assert!(series.windows(2).all(|w| w[1] >= w[0]));
        assert!(series.last().unwrap() > &0.99);
    }
}
