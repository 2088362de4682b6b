//! Selective-isolation decision pipeline.
//!
//! Every request's hit chain passes through [`decide_reuse`], which
//! resolves three things: how many leading entries may be served from
//! cache, which namespace receives the recomputed continuation, and
//! whether a new attack flag is placed.
//!
//! Enforcement walks the chain for the first flagged entry that gates the
//! requester. A flagged entry with a following chain entry owned by the
//! requester is passed through (owners keep extending their own paths). A
//! gating flag mid-chain truncates reuse at the flag; a gating flag at the
//! end of the chain keeps the full hit but diverts the continuation into
//! the requester's isolated namespace, so probes can neither populate nor
//! observe the shared namespace beyond the barrier.
//!
//! Flag placement marks the deepest reused entry owned by another user,
//! but only when enforcement took no action on the request: once a barrier
//! gated the chain, shallower flags would be redundant. Flags are computed
//! even when enforcement is deactivated, so metadata keeps accumulating
//! while the activator has reuse switched open.

use serde::Serialize;

use crate::cache::{CacheEntry, CacheError, PrefixCache};
use crate::token::{Namespace, PrefixHash, UserId};

/// The detector's verdict for one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReuseDecision {
    /// Number of leading hit-chain entries whose cached content is served.
    pub reused_blocks: usize,
    /// Keys to flag when committing.
    pub flags_to_set: Vec<PrefixHash>,
    /// Namespace receiving the recomputed continuation blocks.
    pub new_block_namespace: Namespace,
    /// True iff enforcement cut the hit chain short.
    pub truncated: bool,
}

/// Decides reuse for `requester` over `hit_chain` (the output of
/// `lookup_longest_prefix` for this request).
pub fn decide_reuse(
    requester: UserId,
    hit_chain: &[CacheEntry],
    enforcement_active: bool,
) -> ReuseDecision {
    let k = hit_chain.len();
    let mut reused_blocks = k;
    let mut truncated = false;
    let mut namespace = Namespace::Shared;
    let mut enforcement_acted = false;

    if enforcement_active {
        for (i, entry) in hit_chain.iter().enumerate() {
            if !entry.attack_flag {
                continue;
            }
            let f = i + 1;
            if f < k {
                if hit_chain[f].owner_id == requester {
                    // Owner-aware pass-through: the next entry on the path
                    // belongs to the requester.
                    continue;
                }
                reused_blocks = f;
                truncated = true;
                namespace = Namespace::IsolatedTo(requester);
                enforcement_acted = true;
                break;
            }
            // The flagged entry terminates the hit chain.
            if entry.owner_id == requester {
                continue;
            }
            // Full hit chain stays reusable, but the continuation diverges
            // into the requester's namespace.
            namespace = Namespace::IsolatedTo(requester);
            enforcement_acted = true;
            break;
        }
    }

    let mut flags_to_set = Vec::new();
    if !enforcement_acted {
        // Deepest reused entry owned by someone else and not yet flagged.
        if let Some(entry) = hit_chain[..reused_blocks]
            .iter()
            .rev()
            .find(|e| e.owner_id != requester && !e.attack_flag)
        {
            flags_to_set.push(entry.key);
        }
    }

    ReuseDecision {
        reused_blocks,
        flags_to_set,
        new_block_namespace: namespace,
        truncated,
    }
}

/// Applies a decision: sets its flags and inserts the recomputed blocks
/// (already hashed in the decision's namespace) owned by `requester`.
/// LRU timestamps of reused entries were refreshed by the lookup.
pub fn commit_decision(
    cache: &mut PrefixCache,
    decision: &ReuseDecision,
    recomputed_chain: &[(PrefixHash, usize)],
    requester: UserId,
) -> Result<(), CacheError> {
    for key in &decision.flags_to_set {
        cache.flag_entry(key)?;
    }
    if !recomputed_chain.is_empty() {
        cache.insert_blocks(recomputed_chain, requester)?;
    }
    Ok(())
}
