//! Discrete-event simulation loop.
//!
//! Arrivals are processed in time order. Each request is chunked and
//! hashed in its policy's namespace, looked up, gated by the policy's
//! reuse decision, and enqueued into the batching latency model with its
//! recomputed token count. Outcomes are recorded when the batch serving a
//! request completes; that is also when the activator window learns the
//! request's realized TTFT.
//!
//! A selective-isolation decision that diverts the continuation into the
//! requester's namespace triggers a second lookup there before inserting:
//! a user repeating previously isolated content reuses their own entries
//! exactly as the user-isolation baseline would.
//!
//! One scenario is one logical execution stream. All randomness comes from
//! the scenario's named seeds, so identical configurations replay
//! identical traces.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activator::{ActivatorConfig, ActivatorWindow};
use crate::cache::{CacheError, PrefixCache};
use crate::config::{ActivatorMode, ConfigError, PolicyKind, ScenarioConfig};
use crate::detector::{commit_decision, decide_reuse};
use crate::latency::{ModelProfile, PendingRequest, ServiceState};
use crate::token::{build_chain, chunk_into_blocks, Namespace, PrefixHash, UserId};
use crate::workload::{generate_attack_sequence, generate_workload, Request};

/// One row of the evaluation trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestOutcome {
    pub request_id: u64,
    pub user: u32,
    pub prompt_tokens: usize,
    pub reused_blocks: usize,
    pub total_blocks: usize,
    pub reuse_fraction: f64,
    pub ttft_ms: f64,
    pub truncated: bool,
    pub isolation_was_active: bool,
}

/// Detector trace row, one per selective-isolation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub request_id: u64,
    pub user: u32,
    pub chain_len: usize,
    pub reused_blocks: usize,
    pub truncated: bool,
    pub flags_set: Vec<u64>,
    pub namespace: Namespace,
}

/// Activator trace row, one per evaluated request in KDE mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivatorRow {
    pub at_ms: f64,
    pub hit_samples: usize,
    pub miss_samples: usize,
    /// Overlap estimate used for this decision; absent while either class
    /// is below the minimum sample count.
    pub overlap: Option<f64>,
    pub active: bool,
}

/// Wall-clock cost samples for the overhead report, microseconds.
#[derive(Debug, Clone, Default, Serialize)]
pub struct OverheadSamples {
    pub detector_us: Vec<f64>,
    pub activator_us: Vec<f64>,
}

/// Cache counters at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheStats {
    pub live_entries: usize,
    pub capacity_blocks: usize,
    pub flagged_entries: usize,
}

/// Everything a scenario run produces.
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub outcomes: Vec<RequestOutcome>,
    pub decisions: Vec<DecisionRow>,
    pub activator_trace: Vec<ActivatorRow>,
    pub overhead: OverheadSamples,
    pub cache_stats: CacheStats,
    pub final_cache: PrefixCache,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invariant breach: {0}")]
    Invariant(#[from] CacheError),
}

enum EventKind {
    Arrival(usize),
    BatchDone(Vec<PendingRequest>),
}

struct QueuedEvent {
    time_ms: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        self.time_ms == other.time_ms && self.seq == other.seq
    }
}

impl Eq for QueuedEvent {}

impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueuedEvent {
    // BinaryHeap is a max-heap; invert for earliest-first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time_ms
            .total_cmp(&self.time_ms)
            .then(other.seq.cmp(&self.seq))
    }
}

struct ArrivalInfo {
    user: u32,
    prompt_tokens: usize,
    reused_blocks: usize,
    total_blocks: usize,
    truncated: bool,
    isolation_was_active: bool,
}

/// Cache interaction of one request under full-reuse policies: look up the
/// chain in `namespace`, reuse every hit, insert the rest owned by `user`.
/// Returns the number of reused blocks.
pub fn serve_full_reuse(
    cache: &mut PrefixCache,
    user: UserId,
    tokens: &[crate::token::Token],
    block_size: usize,
    namespace: Namespace,
) -> Result<usize, CacheError> {
    let (blocks, _) = chunk_into_blocks(tokens, block_size);
    let chain = build_chain(None, &blocks, namespace);
    let hits = cache.lookup_longest_prefix(&chain);
    let reused = hits.len();
    cache.insert_blocks(&index_from(&chain, reused), user)?;
    Ok(reused)
}

/// Cache interaction of one request under selective isolation.
#[derive(Debug, Clone)]
pub struct SelectiveServe {
    /// Length of the shared-namespace hit chain.
    pub hit_chain_len: usize,
    pub decision: crate::detector::ReuseDecision,
    /// Hits found in the requester's isolated namespace after a diversion.
    pub isolated_hits: usize,
    /// Blocks served from cache in total (shared reuse plus isolated hits).
    pub reused_total: usize,
}

/// Serves one request under selective isolation: shared-namespace lookup,
/// detector decision, and — when the continuation is diverted — a second
/// lookup in the requester's isolated namespace before inserting what
/// remains. This is the exact per-request path the simulation loop runs;
/// the security analysis drives it directly, without the latency model.
pub fn serve_selective_isolation(
    cache: &mut PrefixCache,
    user: UserId,
    tokens: &[crate::token::Token],
    block_size: usize,
    enforcement_active: bool,
) -> Result<SelectiveServe, CacheError> {
    let (blocks, _) = chunk_into_blocks(tokens, block_size);
    let chain = build_chain(None, &blocks, Namespace::Shared);
    let hits = cache.lookup_longest_prefix(&chain);
    let decision = decide_reuse(user, &hits, enforcement_active);
    let reused = decision.reused_blocks;
    let (isolated_hits, to_insert) = match decision.new_block_namespace {
        Namespace::Shared => (0, index_from(&chain, hits.len())),
        ns @ Namespace::IsolatedTo(_) => {
            let parent = if reused > 0 { Some(chain[reused - 1]) } else { None };
            let iso_chain = build_chain(parent, &blocks[reused..], ns);
            let iso_hits = cache.lookup_longest_prefix(&iso_chain);
            let extra = iso_hits.len();
            let to_insert: Vec<(PrefixHash, usize)> = iso_chain[extra..]
                .iter()
                .copied()
                .enumerate()
                .map(|(i, h)| (h, reused + extra + i))
                .collect();
            (extra, to_insert)
        }
    };
    commit_decision(cache, &decision, &to_insert, user)?;
    Ok(SelectiveServe {
        hit_chain_len: hits.len(),
        reused_total: reused + isolated_hits,
        isolated_hits,
        decision,
    })
}

/// Builds the merged, time-ordered request list for a scenario: generated
/// workload, then (when configured) the victim request and probe sequence.
pub fn assemble_requests(config: &ScenarioConfig) -> Vec<Request> {
    let mut requests = Vec::new();
    if let Some(spec) = &config.workload {
        requests = generate_workload(
            spec,
            config.block_size,
            config.seeds.workload,
            config.seeds.arrivals,
        );
    }
    if let Some(attack) = &config.attack {
        let mut next_id = requests.len() as u64;
        requests.push(Request {
            id: next_id,
            user: UserId(attack.probe.victim_id),
            arrival_ms: attack.victim_at_ms,
            tokens: attack.probe.victim_tokens(),
        });
        next_id += 1;
        requests.extend(generate_attack_sequence(
            &attack.probe,
            attack.victim_at_ms + attack.start_offset_ms,
            attack.gap_ms,
            next_id,
        ));
    }
    requests.sort_by(|a, b| a.arrival_ms.total_cmp(&b.arrival_ms).then(a.id.cmp(&b.id)));
    requests
}

/// Runs a scenario from its configuration.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult, SimError> {
    config.validate()?;
    let profile = config.profile.resolve()?;
    let requests = assemble_requests(config);
    run_requests(config, &profile, &requests)
}

/// Runs an explicit request list under a scenario's policy and latency
/// settings. This is the replay path behind workload import and the
/// experiment harnesses.
pub fn run_requests(
    config: &ScenarioConfig,
    profile: &ModelProfile,
    requests: &[Request],
) -> Result<ScenarioResult, SimError> {
    let block_size = config.block_size;
    let mut cache = PrefixCache::new(config.cache_capacity_blocks);
    let mut service = ServiceState::new();
    let mut jitter = ChaCha12Rng::seed_from_u64(config.seeds.jitter);
    let mut window = ActivatorWindow::new();
    let activator_cfg: Option<ActivatorConfig> = match (config.policy.kind, config.policy.activator)
    {
        (PolicyKind::SelectiveIsolation, ActivatorMode::Kde(cfg)) => Some(cfg),
        _ => None,
    };

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for (idx, req) in requests.iter().enumerate() {
        heap.push(QueuedEvent {
            time_ms: req.arrival_ms,
            seq,
            kind: EventKind::Arrival(idx),
        });
        seq += 1;
    }

    let mut infos: HashMap<u64, ArrivalInfo> = HashMap::new();
    let mut outcomes = Vec::with_capacity(requests.len());
    let mut decisions = Vec::new();
    let mut activator_trace = Vec::new();
    let mut overhead = OverheadSamples::default();

    while let Some(event) = heap.pop() {
        let now = event.time_ms;
        match event.kind {
            EventKind::Arrival(idx) => {
                let req = &requests[idx];
                let (blocks, _tail) = chunk_into_blocks(&req.tokens, block_size);
                let total_blocks = blocks.len();

                let (reused_total, truncated, active) = match config.policy.kind {
                    PolicyKind::PrefixCaching => {
                        let reused = serve_full_reuse(
                            &mut cache,
                            req.user,
                            &req.tokens,
                            block_size,
                            Namespace::Shared,
                        )?;
                        (reused, false, false)
                    }
                    PolicyKind::UserIsolation => {
                        let reused = serve_full_reuse(
                            &mut cache,
                            req.user,
                            &req.tokens,
                            block_size,
                            Namespace::IsolatedTo(req.user),
                        )?;
                        (reused, false, true)
                    }
                    PolicyKind::SelectiveIsolation => {
                        let enforcement = match &activator_cfg {
                            None => true,
                            Some(cfg) => {
                                let t0 = Instant::now();
                                let active = window.isolation_active(cfg);
                                overhead
                                    .activator_us
                                    .push(t0.elapsed().as_secs_f64() * 1e6);
                                activator_trace.push(ActivatorRow {
                                    at_ms: now,
                                    hit_samples: window.hit_len(),
                                    miss_samples: window.miss_len(),
                                    overlap: window.overlap(cfg),
                                    active,
                                });
                                active
                            }
                        };

                        let t0 = Instant::now();
                        let served = serve_selective_isolation(
                            &mut cache,
                            req.user,
                            &req.tokens,
                            block_size,
                            enforcement,
                        )?;
                        overhead.detector_us.push(t0.elapsed().as_secs_f64() * 1e6);

                        decisions.push(DecisionRow {
                            request_id: req.id,
                            user: req.user.0,
                            chain_len: served.hit_chain_len,
                            reused_blocks: served.decision.reused_blocks,
                            truncated: served.decision.truncated,
                            flags_set: served
                                .decision
                                .flags_to_set
                                .iter()
                                .map(|h| h.value)
                                .collect(),
                            namespace: served.decision.new_block_namespace,
                        });
                        (served.reused_total, served.decision.truncated, enforcement)
                    }
                };

                infos.insert(
                    req.id,
                    ArrivalInfo {
                        user: req.user.0,
                        prompt_tokens: req.tokens.len(),
                        reused_blocks: reused_total,
                        total_blocks,
                        truncated,
                        isolation_was_active: active,
                    },
                );
                let recomputed = req.tokens.len().saturating_sub(reused_total * block_size);
                service.enqueue(PendingRequest {
                    request_id: req.id,
                    recomputed_tokens: recomputed,
                    arrival_ms: req.arrival_ms,
                });
                if let Some(batch) = service.start_batch_if_idle(now, profile, &mut jitter) {
                    heap.push(QueuedEvent {
                        time_ms: batch.finish_ms,
                        seq,
                        kind: EventKind::BatchDone(batch.members),
                    });
                    seq += 1;
                }
            }
            EventKind::BatchDone(members) => {
                for member in members {
                    let info = infos
                        .remove(&member.request_id)
                        .expect("completion for unknown request");
                    let ttft = now - member.arrival_ms;
                    let fraction = if info.total_blocks == 0 {
                        0.0
                    } else {
                        info.reused_blocks as f64 / info.total_blocks as f64
                    };
                    if let Some(cfg) = &activator_cfg {
                        window.classify_and_record(ttft, info.prompt_tokens.max(1), fraction, cfg);
                    }
                    outcomes.push(RequestOutcome {
                        request_id: member.request_id,
                        user: info.user,
                        prompt_tokens: info.prompt_tokens,
                        reused_blocks: info.reused_blocks,
                        total_blocks: info.total_blocks,
                        reuse_fraction: fraction,
                        ttft_ms: ttft,
                        truncated: info.truncated,
                        isolation_was_active: info.isolation_was_active,
                    });
                }
                if let Some(batch) = service.start_batch_if_idle(now, profile, &mut jitter) {
                    heap.push(QueuedEvent {
                        time_ms: batch.finish_ms,
                        seq,
                        kind: EventKind::BatchDone(batch.members),
                    });
                    seq += 1;
                }
            }
        }
    }

    outcomes.sort_by_key(|o| o.request_id);
    let dump = cache.dump();
    let cache_stats = CacheStats {
        live_entries: cache.len(),
        capacity_blocks: cache.capacity_blocks(),
        flagged_entries: dump.iter().filter(|e| e.attack_flag).count(),
    };
    Ok(ScenarioResult {
        outcomes,
        decisions,
        activator_trace,
        overhead,
        cache_stats,
        final_cache: cache,
    })
}

fn index_from(chain: &[PrefixHash], start: usize) -> Vec<(PrefixHash, usize)> {
    chain[start..]
        .iter()
        .copied()
        .enumerate()
        .map(|(i, h)| (h, start + i))
        .collect()
}

/// One sweep point: the θ value and its full run.
#[derive(Debug)]
pub struct ThetaRun {
    pub theta: f64,
    pub result: ScenarioResult,
}

/// Runs the scenario once per θ with shared seeds. The policy is forced to
/// selective isolation with a KDE activator at each θ.
pub fn run_theta_sweep(config: &ScenarioConfig, thetas: &[f64]) -> Result<Vec<ThetaRun>, SimError> {
    let mut runs = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let mut cfg = config.clone();
        let base = match config.policy.activator {
            ActivatorMode::Kde(a) => a,
            ActivatorMode::AlwaysOn => ActivatorConfig::default(),
        };
        cfg.policy = crate::config::PolicyConfig::selective_isolation(ActivatorMode::Kde(
            ActivatorConfig { theta, ..base },
        ));
        let result = run_scenario(&cfg)?;
        runs.push(ThetaRun { theta, result });
    }
    Ok(runs)
}
