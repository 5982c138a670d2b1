//! Scenario configuration: the declarative description of one simulated
//! deployment — domains with thresholds, users with credentials and behavior
//! profiles, a request schedule, trust parameters, faults, and timing.
//!
//! Scenarios are TOML with a mandatory `schema_version` key. Unknown keys are
//! hard errors, so config drift fails loudly instead of being ignored.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simnet::FaultPlan;
use crate::trust_core::TrustParams;

use super::behavior::BehaviorProfile;
use super::derive_seed;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario does not parse: {0}")]
    Parse(String),
    #[error("scenario invalid:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

/// Fault configuration as written in scenario files. The fault seed is not a
/// file key: it derives from the scenario seed so that one seed controls the
/// entire run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultSpec {
    pub drop_prob: f64,
    pub dup_prob: f64,
    pub tamper_prob: f64,
    pub latency_min: u64,
    pub latency_max: u64,
}

impl Default for FaultSpec {
    fn default() -> Self {
        FaultSpec { drop_prob: 0.0, dup_prob: 0.0, tamper_prob: 0.0, latency_min: 1, latency_max: 1 }
    }
}

impl FaultSpec {
    pub fn to_plan(&self, seed: u64) -> FaultPlan {
        FaultPlan {
            seed,
            drop_prob: self.drop_prob,
            dup_prob: self.dup_prob,
            tamper_prob: self.tamper_prob,
            latency_min: self.latency_min,
            latency_max: self.latency_max,
        }
    }

    pub fn is_zero_fault(&self) -> bool {
        self.drop_prob == 0.0 && self.dup_prob == 0.0 && self.tamper_prob == 0.0
    }
}

/// Watchdog and budget settings, in simulated time units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timing {
    /// Gate watchdog: agents fail closed this long after expecting progress.
    pub t_timeout: u64,
    /// Interface-local fallback clearing a stuck request; keep it above
    /// `t_timeout` so the proxy's verdict normally arrives first.
    pub interface_timeout: u64,
    /// Hard budget for the whole run.
    pub max_time: u64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing { t_timeout: 10, interface_timeout: 30, max_time: 100_000 }
    }
}

/// Deliberate protocol mutations (test doubles) for exercising the checker's
/// violation channel. All off by default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Misbehavior {
    pub proxy_skip_user_gate: bool,
    pub ma_skip_domain_gate: bool,
}

impl Misbehavior {
    pub fn any(&self) -> bool {
        self.proxy_skip_user_gate || self.ma_skip_domain_gate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub id: String,
    /// Domain-tier gate threshold.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub id: String,
    pub domain: String,
    pub password: String,
    pub profile: BehaviorProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    /// Submission time.
    pub at: u64,
    pub user: String,
    pub body: String,
    /// Present a different password than the user's configured one (scripts
    /// authentication failures).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub password: Option<String>,
}

/// One complete simulation input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: TrustParams,
    #[serde(default)]
    pub faults: FaultSpec,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub misbehavior: Misbehavior,
    pub domains: Vec<DomainSpec>,
    pub users: Vec<UserSpec>,
    #[serde(default)]
    pub requests: Vec<RequestSpec>,
}

impl Scenario {
    pub fn from_toml_str(input: &str) -> Result<Self, ScenarioError> {
        toml::from_str(input).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn fault_plan(&self) -> FaultPlan {
        self.faults.to_plan(derive_seed(self.seed, "faults"))
    }

    /// Full referential and range validation; returns every problem found.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            errs.push(format!(
                "schema_version {} unsupported (expected {SCENARIO_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        for e in self.params.validate() {
            errs.push(format!("params: {e}"));
        }
        for e in self.fault_plan().validate() {
            errs.push(format!("faults: {e}"));
        }
        if self.timing.t_timeout < 1 {
            errs.push("timing: t_timeout must be >= 1".into());
        }
        if self.timing.interface_timeout <= self.timing.t_timeout {
            errs.push("timing: interface_timeout must exceed t_timeout".into());
        }

        if self.domains.is_empty() {
            errs.push("at least one domain is required".into());
        }
        let mut domain_ids = std::collections::BTreeSet::new();
        for d in &self.domains {
            if d.id.is_empty() {
                errs.push("domain with empty id".into());
            }
            if !(0.0..=1.0).contains(&d.threshold) {
                errs.push(format!("domain `{}`: threshold {} outside [0, 1]", d.id, d.threshold));
            }
            if !domain_ids.insert(d.id.clone()) {
                errs.push(format!("duplicate domain `{}`", d.id));
            }
        }

        let mut user_ids = std::collections::BTreeSet::new();
        for u in &self.users {
            if u.id.is_empty() {
                errs.push("user with empty id".into());
            }
            if !user_ids.insert(u.id.clone()) {
                errs.push(format!("duplicate user `{}`", u.id));
            }
            if !domain_ids.contains(&u.domain) {
                errs.push(format!("user `{}` references unknown domain `{}`", u.id, u.domain));
            }
            if u.password.is_empty() {
                errs.push(format!("user `{}`: empty password", u.id));
            }
            for e in u.profile.validate() {
                errs.push(format!("user `{}`: {e}", u.id));
            }
        }

        for (i, r) in self.requests.iter().enumerate() {
            if !user_ids.contains(&r.user) {
                errs.push(format!("request #{i} references unknown user `{}`", r.user));
            }
            if r.body.is_empty() {
                errs.push(format!("request #{i}: empty body"));
            }
            if r.at >= self.timing.max_time {
                errs.push(format!("request #{i}: scheduled at {} beyond max_time", r.at));
            }
        }
        errs
    }

    /// Applies one `key=value` override (CLI `--param`). Dotted keys address
    /// sections, e.g. `params.level=2`, `faults.drop_prob=0.1`, `seed=7`.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value.parse().map_err(|_| format!("cannot parse `{value}` for `{key}`"))
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "params.level" => self.params.level = parse(key, value)?,
            "params.weight_positive" => self.params.weight_positive = parse(key, value)?,
            "params.weight_wrong" => self.params.weight_wrong = parse(key, value)?,
            "params.weight_malicious" => self.params.weight_malicious = parse(key, value)?,
            "params.smoothing_alpha" => self.params.smoothing_alpha = parse(key, value)?,
            "params.initial_trust" => self.params.initial_trust = parse(key, value)?,
            "params.user_threshold" => self.params.user_threshold = parse(key, value)?,
            "params.removal_streak" => self.params.removal_streak = parse(key, value)?,
            "params.trusted_min" => self.params.trusted_min = parse(key, value)?,
            "params.nontrusted_max" => self.params.nontrusted_max = parse(key, value)?,
            "faults.drop_prob" => self.faults.drop_prob = parse(key, value)?,
            "faults.dup_prob" => self.faults.dup_prob = parse(key, value)?,
            "faults.tamper_prob" => self.faults.tamper_prob = parse(key, value)?,
            "faults.latency_min" => self.faults.latency_min = parse(key, value)?,
            "faults.latency_max" => self.faults.latency_max = parse(key, value)?,
            "timing.t_timeout" => self.timing.t_timeout = parse(key, value)?,
            "timing.interface_timeout" => self.timing.interface_timeout = parse(key, value)?,
            "timing.max_time" => self.timing.max_time = parse(key, value)?,
            other => return Err(format!("unknown parameter `{other}`")),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
schema_version = 1
seed = 42

[[domains]]
id = "subsidiary-a"
threshold = 0.5

[[users]]
id = "alice"
domain = "subsidiary-a"
password = "alice-pw"
profile = { kind = "honest" }

[[requests]]
at = 5
user = "alice"
body = "get-report"
"#;

    #[test]
    fn sample_parses_and_validates() {
        let scenario = Scenario::from_toml_str(SAMPLE).unwrap();
        assert_eq!(scenario.validate(), Vec::<String>::new());
        assert_eq!(scenario.seed, 42);
        assert_eq!(scenario.users.len(), 1);
    }

    #[test]
    fn unknown_top_level_key_is_a_parse_error() {
        let text = format!("{SAMPLE}\nnot_a_key = 3\n");
        assert!(Scenario::from_toml_str(&text).is_err());
    }

    #[test]
    fn unknown_nested_key_is_a_parse_error() {
        let text = SAMPLE.replace("[[domains]]", "[params]\nbogus = 1\n\n[[domains]]");
        assert!(Scenario::from_toml_str(&text).is_err());
    }

    #[test]
    fn unknown_domain_reference_is_reported_with_the_user() {
        let text = SAMPLE.replace("domain = \"subsidiary-a\"", "domain = \"nowhere\"");
        let scenario = Scenario::from_toml_str(&text).unwrap();
        let errs = scenario.validate();
        assert!(errs.iter().any(|e| e.contains("alice") && e.contains("nowhere")), "{errs:?}");
    }

    #[test]
    fn every_violation_is_listed() {
        let text = SAMPLE
            .replace("threshold = 0.5", "threshold = 1.5")
            .replace("password = \"alice-pw\"", "password = \"\"");
        let scenario = Scenario::from_toml_str(&text).unwrap();
        let errs = scenario.validate();
        assert!(errs.len() >= 2, "{errs:?}");
    }

    #[test]
    fn overrides_apply() {
        let mut scenario = Scenario::from_toml_str(SAMPLE).unwrap();
        scenario.apply_override("params.level", "3").unwrap();
        scenario.apply_override("faults.drop_prob", "0.25").unwrap();
        scenario.apply_override("seed", "9").unwrap();
        assert_eq!(scenario.params.level, 3);
        assert_eq!(scenario.faults.drop_prob, 0.25);
        assert_eq!(scenario.seed, 9);
        assert!(scenario.apply_override("params.bogus", "1").is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let scenario = Scenario::from_toml_str(SAMPLE).unwrap();
        let text = scenario.to_toml_string();
        assert_eq!(Scenario::from_toml_str(&text).unwrap(), scenario);
    }
}
