//! Scenario configuration: the one structured file describing a run.
//!
//! The schema is JSON, versioned through `schema_version`. Seeds are
//! explicit — there is no implicit entropy anywhere in a run — and split
//! by purpose (workload content, arrival times, latency jitter) so editing
//! one knob never perturbs the others' streams.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activator::ActivatorConfig;
use crate::latency::{builtin_profile, ModelProfile};
use crate::workload::{ProbeSpec, WorkloadSpec};

pub const SCHEMA_VERSION: u32 = 1;

/// Serving policy under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Unprotected prefix caching: every block shared, no metadata acted on.
    PrefixCaching,
    /// Per-user cache isolation via a namespace salt on every request.
    UserIsolation,
    /// Owner/flag metadata plus the detector, gated by the activator.
    SelectiveIsolation,
}

/// How enforcement is switched for the selective-isolation policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ActivatorMode {
    /// Detector enforced on every request.
    AlwaysOn,
    /// KDE-overlap activator with the embedded configuration.
    Kde(ActivatorConfig),
}

impl ActivatorMode {
    pub fn kde(theta: f64) -> Self {
        ActivatorMode::Kde(ActivatorConfig {
            theta,
            ..ActivatorConfig::default()
        })
    }
}

impl PolicyKind {
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::PrefixCaching => "prefix-caching",
            PolicyKind::UserIsolation => "user-isolation",
            PolicyKind::SelectiveIsolation => "selective-isolation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Only meaningful for `SelectiveIsolation`; defaults to always-on.
    #[serde(default = "default_activator")]
    pub activator: ActivatorMode,
}

fn default_activator() -> ActivatorMode {
    ActivatorMode::AlwaysOn
}

impl PolicyConfig {
    pub fn prefix_caching() -> Self {
        Self {
            kind: PolicyKind::PrefixCaching,
            activator: ActivatorMode::AlwaysOn,
        }
    }

    pub fn user_isolation() -> Self {
        Self {
            kind: PolicyKind::UserIsolation,
            activator: ActivatorMode::AlwaysOn,
        }
    }

    pub fn selective_isolation(activator: ActivatorMode) -> Self {
        Self {
            kind: PolicyKind::SelectiveIsolation,
            activator,
        }
    }
}

/// Explicit per-purpose seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub workload: u64,
    pub arrivals: u64,
    pub jitter: u64,
}

impl Seeds {
    pub fn offset(self, delta: u64) -> Self {
        Self {
            workload: self.workload.wrapping_add(delta),
            arrivals: self.arrivals.wrapping_add(delta),
            jitter: self.jitter.wrapping_add(delta),
        }
    }
}

/// Latency profile reference: a bundled name or an inline definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileRef {
    Name(String),
    Inline(ModelProfile),
}

impl ProfileRef {
    pub fn resolve(&self) -> Result<ModelProfile, ConfigError> {
        match self {
            ProfileRef::Name(name) => builtin_profile(name).ok_or_else(|| ConfigError {
                field: "profile".into(),
                message: format!("unknown profile name {name:?}; bundled: small, mid, large"),
            }),
            ProfileRef::Inline(profile) => Ok(profile.clone()),
        }
    }
}

/// Attack description embedded in a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub probe: ProbeSpec,
    /// Victim request arrival, ms.
    #[serde(default)]
    pub victim_at_ms: f64,
    /// Probes arrive at victim_at_ms + start_offset_ms + i * gap_ms.
    #[serde(default = "default_attack_offset")]
    pub start_offset_ms: f64,
    #[serde(default = "default_attack_gap")]
    pub gap_ms: f64,
}

fn default_attack_offset() -> f64 {
    1000.0
}

fn default_attack_gap() -> f64 {
    1000.0
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub policy: PolicyConfig,
    pub profile: ProfileRef,
    pub cache_capacity_blocks: usize,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    #[serde(default)]
    pub workload: Option<WorkloadSpec>,
    #[serde(default)]
    pub attack: Option<AttackConfig>,
    pub seeds: Seeds,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_block_size() -> usize {
    16
}

/// A configuration problem, naming the offending field.
#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize)]
#[error("config error at `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |field: &str, message: String| {
            Err(ConfigError {
                field: field.into(),
                message,
            })
        };
        if self.schema_version != SCHEMA_VERSION {
            return err(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            );
        }
        if self.cache_capacity_blocks < 1 {
            return err(
                "cache_capacity_blocks",
                "must be at least one block".into(),
            );
        }
        if self.block_size < 1 {
            return err("block_size", "must be >= 1".into());
        }
        let profile = self.profile.resolve()?;
        if let Err(message) = profile.validate() {
            return err("profile", message);
        }
        if self.workload.is_none() && self.attack.is_none() {
            return err("workload", "scenario needs a workload, an attack, or both".into());
        }
        if let Some(w) = &self.workload {
            if let Err(message) = w.validate() {
                return err("workload", message);
            }
        }
        if let Some(a) = &self.attack {
            if let Err(message) = a.probe.validate(self.block_size) {
                return err("attack", message);
            }
            if a.gap_ms <= 0.0 {
                return err("attack.gap_ms", "must be > 0".into());
            }
        }
        if let ActivatorMode::Kde(cfg) = self.policy.activator {
            if let Err(message) = cfg.validate() {
                return err("policy.activator", message);
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: ScenarioConfig = serde_json::from_str(text).map_err(|e| ConfigError {
            field: "(parse)".into(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }
}
