//! Canned experiment presets, each runnable end-to-end from one CLI
//! command. Every preset writes CSVs with documented columns into the
//! output directory and returns the paths written. Preset outputs are
//! deterministic: identical invocations produce identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{
    ActivatorMode, AttackConfig, PolicyConfig, PolicyKind, ProfileRef, ScenarioConfig, Seeds,
    SCHEMA_VERSION,
};
use crate::engine::{run_scenario, run_theta_sweep, SimError};
use crate::experiments::{run_attack_experiment, run_hit_miss, HitMissConfig};
use crate::latency::{builtin_profile, ModelProfile};
use crate::report::ReportError;
use crate::summary::compute_summary;
use crate::workload::{ProbeSpec, ReuseLevel, SecretPosition, WorkloadSpec};

/// The five bundled experiment presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Five-workload reuse matrix under all three policies.
    WorkloadMatrix,
    /// The three latency profiles under all three policies.
    ModelMatrix,
    /// Victim-then-probes attack replay under both policies.
    AttackReplay,
    /// Selective isolation across a θ grid plus policy baselines.
    ThetaSweep,
    /// Hit/miss distinguishability across an arrival-rate ladder.
    RpsLadder,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::WorkloadMatrix => "workload-matrix",
            Preset::ModelMatrix => "model-matrix",
            Preset::AttackReplay => "attack-replay",
            Preset::ThetaSweep => "theta-sweep",
            Preset::RpsLadder => "rps-ladder",
        }
    }

    pub fn by_name(name: &str) -> Option<Preset> {
        match name {
            "workload-matrix" => Some(Preset::WorkloadMatrix),
            "model-matrix" => Some(Preset::ModelMatrix),
            "attack-replay" => Some(Preset::AttackReplay),
            "theta-sweep" => Some(Preset::ThetaSweep),
            "rps-ladder" => Some(Preset::RpsLadder),
            _ => None,
        }
    }

    pub fn all() -> [Preset; 5] {
        [
            Preset::WorkloadMatrix,
            Preset::ModelMatrix,
            Preset::AttackReplay,
            Preset::ThetaSweep,
            Preset::RpsLadder,
        ]
    }
}

#[derive(Debug, Error)]
pub enum PresetError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn write_text(path: &Path, text: &str) -> Result<(), PresetError> {
    std::fs::write(path, text).map_err(|e| PresetError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Default seeds used by every preset.
pub fn preset_seeds() -> Seeds {
    Seeds {
        workload: 1001,
        arrivals: 2002,
        jitter: 3003,
    }
}

/// The five workload presets: (label, intra, inter).
pub fn workload_matrix_levels() -> [(&'static str, ReuseLevel, ReuseLevel); 5] {
    [
        ("W1", ReuseLevel::High, ReuseLevel::Zero),
        ("W2", ReuseLevel::High, ReuseLevel::Moderate),
        ("W3", ReuseLevel::Moderate, ReuseLevel::Moderate),
        ("W4", ReuseLevel::High, ReuseLevel::High),
        ("W5", ReuseLevel::Zero, ReuseLevel::High),
    ]
}

/// Standard 10-users x 100-requests workload at 1 RPS.
pub fn standard_workload(intra: ReuseLevel, inter: ReuseLevel) -> WorkloadSpec {
    WorkloadSpec {
        users: 10,
        requests_per_user: 100,
        arrival_rps: 1.0,
        intra_reuse: intra,
        inter_reuse: inter,
        prompt_blocks: 20,
        secret_position: SecretPosition::Middle,
        vocabulary_size: 50_000,
        seed: None,
    }
}

/// Scenario skeleton shared by the workload-driven presets.
pub fn standard_scenario(
    policy: PolicyConfig,
    profile: &str,
    workload: WorkloadSpec,
) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        policy,
        profile: ProfileRef::Name(profile.into()),
        cache_capacity_blocks: 65_536,
        block_size: 16,
        workload: Some(workload),
        attack: None,
        seeds: preset_seeds(),
    }
}

fn three_policies() -> [PolicyConfig; 3] {
    [
        PolicyConfig::prefix_caching(),
        PolicyConfig::user_isolation(),
        PolicyConfig::selective_isolation(ActivatorMode::AlwaysOn),
    ]
}

fn fmt_float(v: f64) -> String {
    format!("{v:.6}")
}

fn run_workload_matrix(dir: &Path) -> Result<Vec<PathBuf>, PresetError> {
    let mut csv = String::from("workload,policy,hit_rate,ttft_mean,ttft_p50,ttft_p99\n");
    for (label, intra, inter) in workload_matrix_levels() {
        for policy in three_policies() {
            let cfg = standard_scenario(policy, "mid", standard_workload(intra, inter));
            let result = run_scenario(&cfg)?;
            let s = compute_summary(&result.outcomes, policy.kind.label(), &[]);
            let _ = writeln!(
                csv,
                "{label},{},{},{},{},{}",
                policy.kind.label(),
                fmt_float(s.hit_rate),
                fmt_float(s.ttft_mean),
                fmt_float(s.ttft_p50),
                fmt_float(s.ttft_p99),
            );
        }
    }
    let path = dir.join("workload_matrix.csv");
    write_text(&path, &csv)?;
    Ok(vec![path])
}

fn run_model_matrix(dir: &Path) -> Result<Vec<PathBuf>, PresetError> {
    let mut csv = String::from("profile,policy,hit_rate,ttft_mean,ttft_p50,ttft_p99\n");
    for profile in ["small", "mid", "large"] {
        for policy in three_policies() {
            let cfg = standard_scenario(
                policy,
                profile,
                standard_workload(ReuseLevel::High, ReuseLevel::Moderate),
            );
            let result = run_scenario(&cfg)?;
            let s = compute_summary(&result.outcomes, policy.kind.label(), &[]);
            let _ = writeln!(
                csv,
                "{profile},{},{},{},{},{}",
                policy.kind.label(),
                fmt_float(s.hit_rate),
                fmt_float(s.ttft_mean),
                fmt_float(s.ttft_p50),
                fmt_float(s.ttft_p99),
            );
        }
    }
    let path = dir.join("model_matrix.csv");
    write_text(&path, &csv)?;
    Ok(vec![path])
}

/// Profile used by the attack replay: the large profile with tighter
/// jitter, mirroring a quiet system where the channel is cleanest.
pub fn attack_profile() -> ModelProfile {
    ModelProfile {
        noise_sigma: 0.04,
        name: "attack-target".into(),
        ..builtin_profile("large").expect("bundled")
    }
}

/// The canonical probe template: a 20-block known prefix, one candidate
/// block, a 20-block suffix, 20 candidates with the secret at position 9.
pub fn attack_probe_spec() -> ProbeSpec {
    let block = 16usize;
    ProbeSpec {
        prefix: (0..(20 * block) as u32).map(|i| 1000 + i).collect(),
        suffix: (0..(20 * block) as u32).map(|i| 20_000 + i).collect(),
        candidates: (0..20)
            .map(|c| (0..block as u32).map(|k| 40_000 + c * block as u32 + k).collect())
            .collect(),
        correct_index: 9,
        attacker_id: 99,
        victim_id: 1,
    }
}

/// Scenario for the attack replay preset.
pub fn attack_scenario() -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        policy: PolicyConfig::selective_isolation(ActivatorMode::AlwaysOn),
        profile: ProfileRef::Inline(attack_profile()),
        cache_capacity_blocks: 65_536,
        block_size: 16,
        workload: None,
        attack: Some(AttackConfig {
            probe: attack_probe_spec(),
            victim_at_ms: 0.0,
            start_offset_ms: 1000.0,
            gap_ms: 1000.0,
        }),
        seeds: preset_seeds(),
    }
}

fn run_attack_replay(dir: &Path) -> Result<Vec<PathBuf>, PresetError> {
    let report = run_attack_experiment(&attack_scenario())?;
    let mut csv = String::from("policy,probe_index,reuse_fraction,ttft_ms\n");
    for run in [&report.prefix_caching, &report.selective_isolation] {
        for p in &run.probes {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                run.policy,
                p.index,
                fmt_float(p.reuse_fraction),
                fmt_float(p.ttft_ms),
            );
        }
    }
    let csv_path = dir.join("attack_probes.csv");
    write_text(&csv_path, &csv)?;
    let report_path = dir.join("attack_report.json");
    let text = serde_json::to_string_pretty(&report).expect("serializable report");
    write_text(&report_path, &format!("{text}\n"))?;
    Ok(vec![csv_path, report_path])
}

/// θ grid used by the sweep preset.
pub fn theta_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Scenario for the θ sweep: the high-reuse workload on the large profile.
pub fn theta_sweep_scenario() -> ScenarioConfig {
    standard_scenario(
        PolicyConfig::selective_isolation(ActivatorMode::kde(0.5)),
        "large",
        standard_workload(ReuseLevel::High, ReuseLevel::High),
    )
}

fn run_theta_sweep_preset(dir: &Path) -> Result<Vec<PathBuf>, PresetError> {
    let base = theta_sweep_scenario();
    let runs = run_theta_sweep(&base, &theta_grid())?;
    let mut csv = String::from("theta,hit_rate,ttft_mean\n");
    for run in &runs {
        let s = compute_summary(&run.result.outcomes, "selective-isolation", &[]);
        let _ = writeln!(
            csv,
            "{},{},{}",
            fmt_float(run.theta),
            fmt_float(s.hit_rate),
            fmt_float(s.ttft_mean),
        );
    }
    let sweep_path = dir.join("theta_sweep.csv");
    write_text(&sweep_path, &csv)?;

    let mut baselines = String::from("policy,hit_rate,ttft_mean\n");
    for policy in three_policies() {
        let mut cfg = base.clone();
        cfg.policy = policy;
        let result = run_scenario(&cfg)?;
        let label = match (policy.kind, policy.activator) {
            (PolicyKind::SelectiveIsolation, ActivatorMode::AlwaysOn) => "selective-isolation-always-on",
            (kind, _) => kind.label(),
        };
        let s = compute_summary(&result.outcomes, label, &[]);
        let _ = writeln!(
            baselines,
            "{label},{},{}",
            fmt_float(s.hit_rate),
            fmt_float(s.ttft_mean),
        );
    }
    let base_path = dir.join("theta_baselines.csv");
    write_text(&base_path, &baselines)?;
    Ok(vec![sweep_path, base_path])
}

/// Arrival rates probed by the RPS ladder.
pub fn rps_ladder_rates() -> [f64; 5] {
    [1.0, 5.0, 10.0, 20.0, 40.0]
}

/// Hit/miss measurement at one arrival rate on the large profile.
pub fn rps_ladder_config(rps: f64) -> HitMissConfig {
    HitMissConfig {
        profile: builtin_profile("large").expect("bundled"),
        prompt_blocks: 31,
        block_size: 16,
        rps,
        pairs: 250,
        vocabulary_size: 50_000,
        seeds: preset_seeds(),
    }
}

fn run_rps_ladder(dir: &Path) -> Result<Vec<PathBuf>, PresetError> {
    let mut csv = String::from("rps,overlap,ttft_hit_mean,ttft_miss_mean,gap_ms\n");
    for rps in rps_ladder_rates() {
        let report = run_hit_miss(&rps_ladder_config(rps))?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            fmt_float(rps),
            fmt_float(report.overlap),
            fmt_float(report.ttft_hit_mean),
            fmt_float(report.ttft_miss_mean),
            fmt_float(report.gap_ms),
        );
    }
    let path = dir.join("rps_ladder.csv");
    write_text(&path, &csv)?;
    Ok(vec![path])
}

/// Runs a preset, writing its artifacts into `dir`.
pub fn run_preset(preset: Preset, dir: &Path) -> Result<Vec<PathBuf>, PresetError> {
    std::fs::create_dir_all(dir).map_err(|e| PresetError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    match preset {
        Preset::WorkloadMatrix => run_workload_matrix(dir),
        Preset::ModelMatrix => run_model_matrix(dir),
        Preset::AttackReplay => run_attack_replay(dir),
        Preset::ThetaSweep => run_theta_sweep_preset(dir),
        Preset::RpsLadder => run_rps_ladder(dir),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_round_trip() {
        for preset in Preset::all() {
            assert_eq!(Preset::by_name(preset.name()), Some(preset));
        }
        assert_eq!(Preset::by_name("fig8"), None);
    }

    #[test]
    fn attack_scenario_validates() {
        attack_scenario().validate().unwrap();
        theta_sweep_scenario().validate().unwrap();
    }
}
