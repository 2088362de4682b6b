//! Multi-user workload generation and the probing attacker.
//!
//! Workloads mix three per-request behaviors: repeating one of the user's
//! own earlier prompts (intra-user reuse), adopting a globally shared
//! template stem with the user's private block substituted into its secret
//! slot (inter-user reuse), and issuing a fresh random prompt. The two
//! reuse axes are configured as qualitative levels mapped to probabilities
//! Zero=0, Low=0.2, Moderate=0.5, High=0.9. Fresh probability is
//! (1-pi)(1-pe); the joint mass is split evenly between the two axes, so
//! each measured frequency stays monotone in its configured level.
//!
//! Templates are drawn per user without replacement from a pool sized at
//! requests_per_user, so a user never sends the same template stem twice:
//! with intra reuse at Zero no two requests from one user share a prefix,
//! which is what zeroes the user-isolation baseline's hit rate.
//!
//! Arrival times are a Poisson process: exponential gaps at the configured
//! mean rate, drawn from a dedicated arrivals stream so editing workload
//! content never perturbs timing.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::token::{Token, UserId};

/// Qualitative reuse level for one axis of the workload matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReuseLevel {
    Zero,
    Low,
    Moderate,
    High,
}

impl ReuseLevel {
    pub fn probability(self) -> f64 {
        match self {
            ReuseLevel::Zero => 0.0,
            ReuseLevel::Low => 0.2,
            ReuseLevel::Moderate => 0.5,
            ReuseLevel::High => 0.9,
        }
    }
}

/// Where the per-user secret block sits inside the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecretPosition {
    Head,
    Middle,
    Tail,
}

impl SecretPosition {
    fn slot(self, prompt_blocks: usize) -> usize {
        match self {
            SecretPosition::Head => 0,
            SecretPosition::Middle => prompt_blocks / 2,
            SecretPosition::Tail => prompt_blocks - 1,
        }
    }
}

/// Full description of one generated workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub users: u32,
    pub requests_per_user: u32,
    /// Mean arrival rate, requests per second.
    pub arrival_rps: f64,
    pub intra_reuse: ReuseLevel,
    pub inter_reuse: ReuseLevel,
    /// Prompt length in full blocks.
    pub prompt_blocks: usize,
    pub secret_position: SecretPosition,
    pub vocabulary_size: u32,
    /// Content seed; when omitted the scenario's workload seed applies.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.users < 1 {
            return Err("workload.users must be >= 1".into());
        }
        if self.requests_per_user < 1 {
            return Err("workload.requests_per_user must be >= 1".into());
        }
        if self.prompt_blocks < 1 {
            return Err("workload.prompt_blocks must be >= 1".into());
        }
        if self.arrival_rps <= 0.0 {
            return Err("workload.arrival_rps must be > 0".into());
        }
        if self.vocabulary_size < 2 {
            return Err("workload.vocabulary_size must be >= 2".into());
        }
        Ok(())
    }
}

/// One user's prompt with its arrival time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub user: UserId,
    pub arrival_ms: f64,
    pub tokens: Vec<Token>,
}

fn random_block<R: Rng>(rng: &mut R, block_size: usize, vocab: u32) -> Vec<Token> {
    (0..block_size)
        .map(|_| Token(rng.random_range(0..vocab)))
        .collect()
}

/// How each request chose its stem; exposed for distribution tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StemChoice {
    Intra,
    Inter,
    Fresh,
}

pub(crate) fn mixture_weights(intra: ReuseLevel, inter: ReuseLevel) -> (f64, f64, f64) {
    let pi = intra.probability();
    let pe = inter.probability();
    let joint = pi * pe;
    let w_intra = pi * (1.0 - pe) + joint / 2.0;
    let w_inter = pe * (1.0 - pi) + joint / 2.0;
    let w_fresh = (1.0 - pi) * (1.0 - pe);
    (w_intra, w_inter, w_fresh)
}

/// Generates the time-ordered request list for `spec`. Content is drawn
/// from `content_seed` (falls back to `spec.seed` when set), arrival gaps
/// from `arrival_seed`.
pub fn generate_workload(
    spec: &WorkloadSpec,
    block_size: usize,
    content_seed: u64,
    arrival_seed: u64,
) -> Vec<Request> {
    generate_workload_traced(spec, block_size, content_seed, arrival_seed).0
}

/// As [`generate_workload`], additionally returning each request's stem
/// choice for reuse-frequency assertions.
pub fn generate_workload_traced(
    spec: &WorkloadSpec,
    block_size: usize,
    content_seed: u64,
    arrival_seed: u64,
) -> (Vec<Request>, Vec<StemChoice>) {
    let seed = spec.seed.unwrap_or(content_seed);
    let mut content = ChaCha12Rng::seed_from_u64(seed);
    let users = spec.users as usize;
    let per_user = spec.requests_per_user as usize;
    let slot = spec.secret_position.slot(spec.prompt_blocks);
    let vocab = spec.vocabulary_size;

    // Global template pool: shared stems with a hole at the secret slot.
    let pool_len = per_user;
    let templates: Vec<Vec<Vec<Token>>> = (0..pool_len)
        .map(|_| {
            (0..spec.prompt_blocks)
                .map(|_| random_block(&mut content, block_size, vocab))
                .collect()
        })
        .collect();

    // Per-user secret block, drawn once.
    let secrets: Vec<Vec<Token>> = (0..users)
        .map(|_| random_block(&mut content, block_size, vocab))
        .collect();

    // Per-user adoption order over the pool, without replacement.
    let adoption_orders: Vec<Vec<usize>> = (0..users)
        .map(|_| {
            let mut order: Vec<usize> = (0..pool_len).collect();
            order.shuffle(&mut content);
            order
        })
        .collect();

    let (w_intra, w_inter, _) = mixture_weights(spec.intra_reuse, spec.inter_reuse);

    // Interleaving deck: user ids, each repeated per_user times, shuffled.
    let mut deck: Vec<usize> = (0..users).flat_map(|u| std::iter::repeat_n(u, per_user)).collect();
    deck.shuffle(&mut content);

    let mut histories: Vec<Vec<Vec<Token>>> = vec![Vec::new(); users];
    let mut adopted: Vec<usize> = vec![0; users];
    let mut requests = Vec::with_capacity(deck.len());
    let mut choices = Vec::with_capacity(deck.len());

    for (id, &u) in deck.iter().enumerate() {
        let draw: f64 = content.random();
        let mut choice = if draw < w_intra {
            StemChoice::Intra
        } else if draw < w_intra + w_inter {
            StemChoice::Inter
        } else {
            StemChoice::Fresh
        };
        if choice == StemChoice::Intra && histories[u].is_empty() {
            choice = StemChoice::Fresh;
        }
        if choice == StemChoice::Inter && adopted[u] >= pool_len {
            choice = StemChoice::Fresh;
        }
        let tokens: Vec<Token> = match choice {
            StemChoice::Intra => {
                let pick = content.random_range(0..histories[u].len());
                histories[u][pick].clone()
            }
            StemChoice::Inter => {
                let t = adoption_orders[u][adopted[u]];
                adopted[u] += 1;
                let mut blocks = templates[t].clone();
                blocks[slot] = secrets[u].clone();
                blocks.concat()
            }
            StemChoice::Fresh => {
                let mut blocks: Vec<Vec<Token>> = (0..spec.prompt_blocks)
                    .map(|_| random_block(&mut content, block_size, vocab))
                    .collect();
                blocks[slot] = secrets[u].clone();
                blocks.concat()
            }
        };
        histories[u].push(tokens.clone());
        requests.push(Request {
            id: id as u64,
            user: UserId(u as u32),
            arrival_ms: 0.0,
            tokens,
        });
        choices.push(choice);
    }

    // Poisson arrivals over the merged stream.
    let mut arrivals = ChaCha12Rng::seed_from_u64(arrival_seed);
    let gap = Exp::new(spec.arrival_rps / 1000.0).expect("positive rate");
    let mut t = 0.0;
    for req in &mut requests {
        t += gap.sample(&mut arrivals);
        req.arrival_ms = t;
    }
    (requests, choices)
}

/// A probing attack: a fixed template prefix/suffix with one secret slot
/// and an ordered candidate list for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    /// Known template prefix (must span at least one full block).
    pub prefix: Vec<u32>,
    /// Template continuation after the secret slot. May be empty.
    #[serde(default)]
    pub suffix: Vec<u32>,
    /// Ordered candidate fillers for the secret slot.
    pub candidates: Vec<Vec<u32>>,
    /// 1-based position of the true secret within `candidates`.
    pub correct_index: usize,
    pub attacker_id: u32,
    pub victim_id: u32,
}

impl ProbeSpec {
    pub fn validate(&self, block_size: usize) -> Result<(), String> {
        if self.candidates.is_empty() {
            return Err("attack.candidates must be non-empty".into());
        }
        if self.correct_index < 1 || self.correct_index > self.candidates.len() {
            return Err(format!(
                "attack.correct_index must be in 1..={}, got {}",
                self.candidates.len(),
                self.correct_index
            ));
        }
        if self.prefix.len() < block_size {
            return Err(format!(
                "attack.prefix must span at least one full block ({} tokens), got {}",
                block_size,
                self.prefix.len()
            ));
        }
        if self.attacker_id == self.victim_id {
            return Err("attack.attacker_id must differ from attack.victim_id".into());
        }
        Ok(())
    }

    fn assemble(&self, candidate: &[u32]) -> Vec<Token> {
        self.prefix
            .iter()
            .chain(candidate.iter())
            .chain(self.suffix.iter())
            .map(|&t| Token(t))
            .collect()
    }

    /// The victim's prompt: the template with the true secret filled in.
    pub fn victim_tokens(&self) -> Vec<Token> {
        self.assemble(&self.candidates[self.correct_index - 1])
    }
}

/// Builds the attacker's probe requests: one request per candidate, in
/// order, arriving at `start_ms + i * gap_ms` (1-based i). Request ids
/// start at `first_id`.
pub fn generate_attack_sequence(
    probe: &ProbeSpec,
    start_ms: f64,
    gap_ms: f64,
    first_id: u64,
) -> Vec<Request> {
    probe
        .candidates
        .iter()
        .enumerate()
        .map(|(i, candidate)| Request {
            id: first_id + i as u64,
            user: UserId(probe.attacker_id),
            arrival_ms: start_ms + (i + 1) as f64 * gap_ms,
            tokens: probe.assemble(candidate),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token::{build_chain, chunk_into_blocks, Namespace};

    fn spec(intra: ReuseLevel, inter: ReuseLevel) -> WorkloadSpec {
        WorkloadSpec {
            users: 4,
            requests_per_user: 50,
            arrival_rps: 1.0,
            intra_reuse: intra,
            inter_reuse: inter,
            prompt_blocks: 6,
            secret_position: SecretPosition::Middle,
            vocabulary_size: 50_000,
            seed: Some(11),
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(ReuseLevel::High, ReuseLevel::Moderate);
        let a = generate_workload(&s, 16, 1, 2);
        let b = generate_workload(&s, 16, 1, 2);
        assert_eq!(a, b);
    }

    #[test]
    fn content_and_arrival_seeds_are_independent() {
        let s = spec(ReuseLevel::High, ReuseLevel::Moderate);
        let a = generate_workload(&s, 16, 1, 2);
        let b = generate_workload(&s, 16, 1, 3);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.tokens, y.tokens, "content must not depend on the arrival seed");
        }
        assert!(a.iter().zip(&b).any(|(x, y)| x.arrival_ms != y.arrival_ms));
    }

    #[test]
    fn requests_sorted_by_arrival_with_exponential_gaps() {
        let mut s = spec(ReuseLevel::Moderate, ReuseLevel::Moderate);
        s.users = 10;
        s.requests_per_user = 120;
        s.arrival_rps = 4.0;
        let reqs = generate_workload(&s, 16, 1, 2);
        assert!(reqs.len() >= 1000);
        let mut prev = 0.0;
        let mut sum = 0.0;
        for r in &reqs {
            assert!(r.arrival_ms >= prev);
            sum += r.arrival_ms - prev;
            prev = r.arrival_ms;
        }
        let mean_gap = sum / reqs.len() as f64;
        let expected = 1000.0 / s.arrival_rps;
        assert!(
            (mean_gap - expected).abs() / expected < 0.1,
            "mean gap {mean_gap} vs expected {expected}"
        );
    }

    #[test]
    fn zero_intra_users_never_repeat_a_prefix() {
        let s = spec(ReuseLevel::Zero, ReuseLevel::High);
        let block_size = 16;
        let reqs = generate_workload(&s, block_size, 1, 2);
        // Within one user, no two requests may share even the first block
        // in the user's own namespace.
        for u in 0..s.users {
            let mut first_blocks = std::collections::HashSet::new();
            for r in reqs.iter().filter(|r| r.user == UserId(u)) {
                let (blocks, _) = chunk_into_blocks(&r.tokens, block_size);
                let chain = build_chain(None, &blocks[..1], Namespace::IsolatedTo(UserId(u)));
                assert!(
                    first_blocks.insert(chain[0].value),
                    "user {u} repeated a leading block"
                );
            }
        }
    }

    #[test]
    fn inter_adoption_shares_template_stems_across_users() {
        let s = spec(ReuseLevel::Zero, ReuseLevel::High);
        let block_size = 8;
        let reqs = generate_workload(&s, block_size, 1, 2);
        // Count distinct leading blocks across all users: heavy inter reuse
        // means far fewer stems than requests.
        let mut stems = std::collections::HashSet::new();
        for r in &reqs {
            let (blocks, _) = chunk_into_blocks(&r.tokens, block_size);
            let chain = build_chain(None, &blocks[..1], Namespace::Shared);
            stems.insert(chain[0].value);
        }
        assert!(
            stems.len() < reqs.len() * 7 / 10,
            "expected shared stems, got {} distinct stems for {} requests",
            stems.len(),
            reqs.len()
        );
    }

    #[test]
    fn measured_inter_frequency_is_monotone_in_level() {
        let levels = [
            ReuseLevel::Zero,
            ReuseLevel::Low,
            ReuseLevel::Moderate,
            ReuseLevel::High,
        ];
        let mut prev = -1.0;
        for level in levels {
            let mut s = spec(ReuseLevel::Low, level);
            s.users = 8;
            s.requests_per_user = 400;
            let (_, choices) = generate_workload_traced(&s, 8, 5, 6);
            let inter = choices.iter().filter(|c| **c == StemChoice::Inter).count();
            let freq = inter as f64 / choices.len() as f64;
            assert!(freq > prev, "inter frequency {freq} not above {prev} at {level:?}");
            prev = freq;
        }
    }

    #[test]
    fn measured_intra_frequency_is_monotone_in_level() {
        let levels = [
            ReuseLevel::Zero,
            ReuseLevel::Low,
            ReuseLevel::Moderate,
            ReuseLevel::High,
        ];
        let mut prev = -1.0;
        for level in levels {
            let mut s = spec(level, ReuseLevel::Low);
            s.users = 8;
            s.requests_per_user = 400;
            let (_, choices) = generate_workload_traced(&s, 8, 5, 6);
            let intra = choices.iter().filter(|c| **c == StemChoice::Intra).count();
            let freq = intra as f64 / choices.len() as f64;
            assert!(freq > prev, "intra frequency {freq} not above {prev} at {level:?}");
            prev = freq;
        }
    }

    fn probe() -> ProbeSpec {
        ProbeSpec {
            prefix: (0..32).collect(),
            suffix: (100..116).collect(),
            candidates: (0..20).map(|i| vec![500 + i, 600 + i]).collect(),
            correct_index: 9,
            attacker_id: 9,
            victim_id: 1,
        }
    }

    #[test]
    fn attack_sequence_matches_candidates_in_order() {
        let p = probe();
        let reqs = generate_attack_sequence(&p, 1000.0, 250.0, 77);
        assert_eq!(reqs.len(), 20);
        assert_eq!(reqs[0].id, 77);
        assert_eq!(reqs[0].arrival_ms, 1250.0);
        assert_eq!(reqs[19].arrival_ms, 1000.0 + 20.0 * 250.0);
        // The correct probe is token-identical to the victim's prompt.
        assert_eq!(reqs[8].tokens, p.victim_tokens());
        for (i, r) in reqs.iter().enumerate() {
            if i != 8 {
                assert_ne!(r.tokens, p.victim_tokens());
            }
        }
    }

    #[test]
    fn probes_share_the_pre_chain_with_the_victim() {
        let p = probe();
        let block_size = 16;
        let victim = p.victim_tokens();
        let (vb, _) = chunk_into_blocks(&victim, block_size);
        let vchain = build_chain(None, &vb, Namespace::Shared);
        let pre_blocks = p.prefix.len() / block_size;
        for r in generate_attack_sequence(&p, 0.0, 100.0, 0) {
            let (blocks, _) = chunk_into_blocks(&r.tokens, block_size);
            let chain = build_chain(None, &blocks, Namespace::Shared);
            assert_eq!(&chain[..pre_blocks], &vchain[..pre_blocks]);
        }
    }

    #[test]
    fn empty_suffix_ends_requests_at_the_candidate() {
        let mut p = probe();
        p.suffix = vec![];
        let reqs = generate_attack_sequence(&p, 0.0, 100.0, 0);
        assert_eq!(reqs[0].tokens.len(), p.prefix.len() + p.candidates[0].len());
    }

    #[test]
    fn probe_validation_rejects_short_prefix_and_bad_index() {
        let mut p = probe();
        p.prefix = (0..10).collect();
        assert!(p.validate(16).is_err());
        let mut p = probe();
        p.correct_index = 0;
        assert!(p.validate(16).is_err());
        let mut p = probe();
        p.correct_index = 21;
        assert!(p.validate(16).is_err());
    }
}
