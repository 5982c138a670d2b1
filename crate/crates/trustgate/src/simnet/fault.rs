//! Seeded fault plan: drop, duplication, tamper, and latency.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Fault injection parameters. The same seed always yields the same fault
/// sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultPlan {
    pub seed: u64,
    pub drop_prob: f64,
    pub dup_prob: f64,
    pub tamper_prob: f64,
    /// Inclusive per-hop latency bounds, in simulated time units.
    pub latency_min: u64,
    pub latency_max: u64,
}

impl Default for FaultPlan {
    fn default() -> Self {
        FaultPlan {
            seed: 0,
            drop_prob: 0.0,
            dup_prob: 0.0,
            tamper_prob: 0.0,
            latency_min: 1,
            latency_max: 1,
        }
    }
}

impl FaultPlan {
    pub fn is_zero_fault(&self) -> bool {
        self.drop_prob == 0.0 && self.dup_prob == 0.0 && self.tamper_prob == 0.0
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, p) in [
            ("drop_prob", self.drop_prob),
            ("dup_prob", self.dup_prob),
            ("tamper_prob", self.tamper_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                errs.push(format!("{name} = {p} outside [0, 1]"));
            }
        }
        if self.latency_min < 1 {
            errs.push("latency_min must be >= 1".into());
        }
        if self.latency_min > self.latency_max {
            errs.push(format!(
                "latency_min {} exceeds latency_max {}",
                self.latency_min, self.latency_max
            ));
        }
        errs
    }
}

/// What the network decided to do with one send.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SendFate {
    pub dropped: bool,
    pub duplicated: bool,
    pub tampered: bool,
}

/// Deterministic fault decisions, one stream per simulation.
pub struct FaultRoller {
    plan: FaultPlan,
    rng: ChaCha12Rng,
}

impl FaultRoller {
    pub fn new(plan: FaultPlan) -> Self {
        let rng = ChaCha12Rng::seed_from_u64(plan.seed);
        FaultRoller { plan, rng }
    }

    pub fn plan(&self) -> &FaultPlan {
        &self.plan
    }

    pub fn roll_send(&mut self) -> SendFate {
        let dropped = self.roll(self.plan.drop_prob);
        let duplicated = !dropped && self.roll(self.plan.dup_prob);
        let tampered = !dropped && self.roll(self.plan.tamper_prob);
        SendFate { dropped, duplicated, tampered }
    }

    pub fn roll_latency(&mut self) -> u64 {
        if self.plan.latency_min == self.plan.latency_max {
            self.plan.latency_min
        } else {
            self.rng.gen_range(self.plan.latency_min..=self.plan.latency_max)
        }
    }

    /// Index of the payload byte to corrupt, for a region of `len` bytes.
    pub fn roll_tamper_offset(&mut self, len: usize) -> usize {
        if len <= 1 {
            0
        } else {
            self.rng.gen_range(0..len)
        }
    }

    fn roll(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.rng.gen_bool(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_fate_sequence() {
        let plan = FaultPlan { seed: 9, drop_prob: 0.3, dup_prob: 0.3, tamper_prob: 0.3, ..FaultPlan::default() };
        let mut a = FaultRoller::new(plan.clone());
        let mut b = FaultRoller::new(plan);
        for _ in 0..500 {
            assert_eq!(a.roll_send(), b.roll_send());
            assert_eq!(a.roll_latency(), b.roll_latency());
        }
    }

    #[test]
    fn boundary_probabilities() {
        let mut all_drop = FaultRoller::new(FaultPlan { drop_prob: 1.0, ..FaultPlan::default() });
        assert!(all_drop.roll_send().dropped);
        let mut all_dup = FaultRoller::new(FaultPlan { dup_prob: 1.0, ..FaultPlan::default() });
        let fate = all_dup.roll_send();
        assert!(!fate.dropped && fate.duplicated);
    }

    #[test]
    fn validation_catches_bad_plans() {
        let plan = FaultPlan { drop_prob: 1.5, latency_min: 0, ..FaultPlan::default() };
        let errs = plan.validate();
        assert_eq!(errs.len(), 2);
        let plan = FaultPlan { latency_min: 5, latency_max: 2, ..FaultPlan::default() };
        assert_eq!(plan.validate().len(), 1);
    }
}
