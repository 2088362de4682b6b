//! Tokens, fixed-size block chunking, and chained prefix hashing.
//!
//! A prompt is a token sequence; the cacheable part is its sequence of
//! full blocks. Each block position is identified by a 64-bit hash chained
//! from its parent block's hash, so two prompts share the first k hashes
//! iff they share their first `k * block_size` tokens. The cache namespace
//! (shared vs. per-user) is salted into the digest, which lets per-user
//! isolation and post-flag divergence reuse one identity mechanism.

use serde::{Deserialize, Serialize};

/// A token id from the synthetic vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token(pub u32);

/// A user identity. Requests carry exactly one; colluding attackers are
/// modeled as distinct ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserId(pub u32);

/// Cache key namespace: `Shared` entries are visible to every request,
/// `IsolatedTo(user)` entries only to chains rebuilt for that user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "user", rename_all = "snake_case")]
pub enum Namespace {
    Shared,
    IsolatedTo(UserId),
}

/// One full block of a prompt: exactly `block_size` tokens plus the
/// zero-based position within its prompt. Trailing partial blocks are
/// never materialized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub tokens: Vec<Token>,
    pub index: usize,
}

/// Chained 64-bit digest identifying one cached block position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrefixHash {
    pub value: u64,
    pub namespace: Namespace,
}

/// Splits `tokens` into full blocks of `block_size`, returning the blocks
/// and the number of leftover tail tokens. The tail is never cached and
/// always counts as recomputed.
pub fn chunk_into_blocks(tokens: &[Token], block_size: usize) -> (Vec<Block>, usize) {
    assert!(block_size >= 1, "block_size must be positive");
    let full = tokens.len() / block_size;
    let blocks = (0..full)
        .map(|i| Block {
            tokens: tokens[i * block_size..(i + 1) * block_size].to_vec(),
            index: i,
        })
        .collect();
    (blocks, tokens.len() - full * block_size)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    let mut h = state;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hashes one block onto its parent chain within a namespace. Deterministic
/// in (parent value, every token id, namespace tag); the digest is FNV-1a,
/// fixed for trace stability across runs.
pub fn chain_hash(parent: Option<PrefixHash>, block: &Block, namespace: Namespace) -> PrefixHash {
    let mut h = FNV_OFFSET;
    match namespace {
        Namespace::Shared => h = fnv1a(h, &[0u8]),
        Namespace::IsolatedTo(UserId(u)) => {
            h = fnv1a(h, &[1u8]);
            h = fnv1a(h, &u.to_le_bytes());
        }
    }
    match parent {
        None => h = fnv1a(h, &[0u8]),
        Some(p) => {
            h = fnv1a(h, &[1u8]);
            h = fnv1a(h, &p.value.to_le_bytes());
        }
    }
    for t in &block.tokens {
        h = fnv1a(h, &t.0.to_le_bytes());
    }
    PrefixHash {
        value: h,
        namespace,
    }
}

/// Builds the hash chain for a run of blocks, starting from `parent`
/// (`None` = chain root). Returns one hash per block, in order.
pub fn build_chain(
    parent: Option<PrefixHash>,
    blocks: &[Block],
    namespace: Namespace,
) -> Vec<PrefixHash> {
    let mut chain = Vec::with_capacity(blocks.len());
    let mut prev = parent;
    for block in blocks {
        let h = chain_hash(prev, block, namespace);
        chain.push(h);
        prev = Some(h);
    }
    chain
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(ids: &[u32]) -> Vec<Token> {
        ids.iter().copied().map(Token).collect()
    }

    fn block(ids: &[u32], index: usize) -> Block {
        Block {
            tokens: toks(ids),
            index,
        }
    }

    #[test]
    fn chunk_floor_division() {
        let tokens = toks(&(0..35).collect::<Vec<_>>());
        let (blocks, tail) = chunk_into_blocks(&tokens, 16);
        assert_eq!(blocks.len(), 2);
        assert_eq!(tail, 3);
    }

    #[test]
    fn chunk_exact_fit() {
        let tokens = toks(&(0..16).collect::<Vec<_>>());
        let (blocks, tail) = chunk_into_blocks(&tokens, 16);
        assert_eq!(blocks.len(), 1);
        assert_eq!(tail, 0);
        assert_eq!(blocks[0].index, 0);
    }

    #[test]
    fn chunk_below_one_block() {
        let tokens = toks(&(0..7).collect::<Vec<_>>());
        let (blocks, tail) = chunk_into_blocks(&tokens, 16);
        assert!(blocks.is_empty());
        assert_eq!(tail, 7);
    }

    #[test]
    fn chunk_empty_input() {
        let (blocks, tail) = chunk_into_blocks(&[], 16);
        assert!(blocks.is_empty());
        assert_eq!(tail, 0);
    }

    #[test]
    fn chunking_is_lossless_up_to_tail() {
        let tokens = toks(&(0..53).map(|i| i * 7 % 101).collect::<Vec<_>>());
        let (blocks, tail) = chunk_into_blocks(&tokens, 8);
        let mut rebuilt: Vec<Token> = blocks.iter().flat_map(|b| b.tokens.clone()).collect();
        rebuilt.extend_from_slice(&tokens[tokens.len() - tail..]);
        assert_eq!(rebuilt, tokens);
    }

    #[test]
    fn chain_hash_deterministic() {
        let b = block(&[1, 2, 3, 4], 0);
        let a = chain_hash(None, &b, Namespace::Shared);
        let c = chain_hash(None, &b, Namespace::Shared);
        assert_eq!(a, c);
    }

    #[test]
    fn chain_hash_namespace_salt() {
        let b = block(&[1, 2, 3, 4], 0);
        let shared = chain_hash(None, &b, Namespace::Shared);
        let isolated = chain_hash(None, &b, Namespace::IsolatedTo(UserId(3)));
        assert_ne!(shared.value, isolated.value);
    }

    #[test]
    fn chain_hash_differs_between_isolated_users() {
        let b = block(&[1, 2, 3, 4], 0);
        let u1 = chain_hash(None, &b, Namespace::IsolatedTo(UserId(1)));
        let u2 = chain_hash(None, &b, Namespace::IsolatedTo(UserId(2)));
        assert_ne!(u1.value, u2.value);
    }

    #[test]
    fn chain_hash_depends_on_parent() {
        let b = block(&[5, 6], 1);
        let p1 = chain_hash(None, &block(&[0, 1], 0), Namespace::Shared);
        let p2 = chain_hash(None, &block(&[2, 3], 0), Namespace::Shared);
        assert_ne!(p1, p2);
        let h1 = chain_hash(Some(p1), &b, Namespace::Shared);
        let h2 = chain_hash(Some(p2), &b, Namespace::Shared);
        assert_ne!(h1.value, h2.value);
    }

    // Exhaustive collision check over a 3-token vocabulary: every 2-block
    // prompt (block size 2) must produce a distinct block-2 hash unless the
    // full prefix matches, and distinct content must never collide.
    #[test]
    fn exhaustive_two_block_chains_collision_free() {
        let vocab = [0u32, 1, 2];
        let mut seen: std::collections::HashMap<u64, Vec<u32>> = std::collections::HashMap::new();
        for a in vocab {
            for b in vocab {
                for c in vocab {
                    for d in vocab {
                        let tokens = toks(&[a, b, c, d]);
                        let (blocks, tail) = chunk_into_blocks(&tokens, 2);
                        assert_eq!(tail, 0);
                        let chain = build_chain(None, &blocks, Namespace::Shared);
                        for (i, h) in chain.iter().enumerate() {
                            let content: Vec<u32> =
                                tokens[..(i + 1) * 2].iter().map(|t| t.0).collect();
                            if let Some(prev) = seen.get(&h.value) {
                                assert_eq!(
                                    prev, &content,
                                    "hash collision between distinct prefixes"
                                );
                            } else {
                                seen.insert(h.value, content);
                            }
                        }
                    }
                }
            }
        }
    }

    // Prefix faithfulness: two prompts share the first k chain hashes iff
    // their first k*block_size tokens agree.
    #[test]
    fn chains_are_prefix_faithful() {
        let p1 = toks(&[1, 2, 3, 4, 5, 6, 7, 8]);
        let p2 = toks(&[1, 2, 3, 4, 9, 9, 7, 8]);
        let (b1, _) = chunk_into_blocks(&p1, 2);
        let (b2, _) = chunk_into_blocks(&p2, 2);
        let c1 = build_chain(None, &b1, Namespace::Shared);
        let c2 = build_chain(None, &b2, Namespace::Shared);
        assert_eq!(c1[0], c2[0]);
        assert_eq!(c1[1], c2[1]);
        assert_ne!(c1[2], c2[2]);
        assert_ne!(c1[3], c2[3]);
    }
}
