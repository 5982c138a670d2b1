//! Scripted user behavior profiles and deterministic outcome generation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::trust_core::ActionKind;

/// How a user's granted requests actually behave at the provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BehaviorProfile {
    /// Every task is positive.
    Honest,
    /// Each task is wrong with probability `wrong_prob`.
    Sloppy { wrong_prob: f64 },
    /// After `warmup` honest tasks, each task is malicious with probability
    /// `malicious_prob`.
    Attacker {
        malicious_prob: f64,
        #[serde(default)]
        warmup: u64,
    },
}

impl BehaviorProfile {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        match self {
            BehaviorProfile::Honest => {}
            BehaviorProfile::Sloppy { wrong_prob } => {
                if !(0.0..=1.0).contains(wrong_prob) {
                    errs.push(format!("wrong_prob = {wrong_prob} outside [0, 1]"));
                }
            }
            BehaviorProfile::Attacker { malicious_prob, .. } => {
                if !(0.0..=1.0).contains(malicious_prob) {
                    errs.push(format!("malicious_prob = {malicious_prob} outside [0, 1]"));
                }
            }
        }
        errs
    }
}

fn roll(rng: &mut ChaCha12Rng, p: f64) -> bool {
    if p <= 0.0 {
        false
    } else if p >= 1.0 {
        true
    } else {
        rng.gen_bool(p)
    }
}

/// Deterministic outcome sequence of length `n` for one user.
pub fn generate_behavior(profile: &BehaviorProfile, seed: u64, n: usize) -> Vec<ActionKind> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| match profile {
            BehaviorProfile::Honest => ActionKind::Positive,
            BehaviorProfile::Sloppy { wrong_prob } => {
                if roll(&mut rng, *wrong_prob) {
                    ActionKind::Wrong
                } else {
                    ActionKind::Positive
                }
            }
            BehaviorProfile::Attacker { malicious_prob, warmup } => {
                if (i as u64) < *warmup {
                    ActionKind::Positive
                } else if roll(&mut rng, *malicious_prob) {
                    ActionKind::Malicious
                } else {
                    ActionKind::Positive
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn honest_is_all_positive() {
        let seq = generate_behavior(&BehaviorProfile::Honest, 123, 5);
        assert_eq!(seq, vec![ActionKind::Positive; 5]);
    }

    #[test]
    fn certain_attacker_after_warmup() {
        let profile = BehaviorProfile::Attacker { malicious_prob: 1.0, warmup: 2 };
        let seq = generate_behavior(&profile, 9, 4);
        assert_eq!(
            seq,
            vec![ActionKind::Positive, ActionKind::Positive, ActionKind::Malicious, ActionKind::Malicious]
        );
    }

    #[test]
    fn same_inputs_same_sequence() {
        let profile = BehaviorProfile::Sloppy { wrong_prob: 0.4 };
        assert_eq!(generate_behavior(&profile, 7, 50), generate_behavior(&profile, 7, 50));
    }

    #[test]
    fn zero_length_is_empty() {
        assert!(generate_behavior(&BehaviorProfile::Honest, 0, 0).is_empty());
    }

    #[test]
    fn sloppy_mixes_wrong_and_positive() {
        let profile = BehaviorProfile::Sloppy { wrong_prob: 0.5 };
        let seq = generate_behavior(&profile, 42, 200);
        assert!(seq.iter().any(|k| *k == ActionKind::Wrong));
        assert!(seq.iter().any(|k| *k == ActionKind::Positive));
        assert!(seq.iter().all(|k| *k != ActionKind::Malicious));
    }
}
