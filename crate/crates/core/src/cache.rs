//! Block-granular prefix cache with LRU eviction and per-entry metadata.
//!
//! Each entry carries the id of the user whose request created it
//! (immutable for the entry's lifetime) and an attack flag that marks
//! cross-user reuse. The flag is monotone: once set it stays set until the
//! entry is evicted. Lookups never consult the metadata; gating reuse is
//! the detector's job.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::token::{Namespace, PrefixHash, UserId};

/// One cached block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CacheEntry {
    pub key: PrefixHash,
    pub block_index: usize,
    pub owner_id: UserId,
    pub attack_flag: bool,
    pub last_used: u64,
}

/// Contract violations. These indicate simulator bugs, not domain
/// conditions, and abort the run.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CacheError {
    #[error("insert of already-present key {0:#018x}")]
    DuplicateInsert(u64),
    #[error("flag of absent key {0:#018x}")]
    FlagAbsentKey(u64),
    #[error("evict count {count} exceeds {len} live entries")]
    EvictTooMany { count: usize, len: usize },
}

/// Prefix cache state: hash-keyed entries, a block capacity, and a logical
/// clock that advances once per mutating operation.
#[derive(Debug, Clone)]
pub struct PrefixCache {
    entries: HashMap<u64, CacheEntry>,
    capacity_blocks: usize,
    clock: u64,
}

impl PrefixCache {
    pub fn new(capacity_blocks: usize) -> Self {
        assert!(capacity_blocks >= 1, "capacity must be at least one block");
        Self {
            entries: HashMap::new(),
            capacity_blocks,
            clock: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity_blocks(&self) -> usize {
        self.capacity_blocks
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn get(&self, key: &PrefixHash) -> Option<&CacheEntry> {
        self.entries.get(&key.value)
    }

    pub fn contains(&self, key: &PrefixHash) -> bool {
        self.entries.contains_key(&key.value)
    }

    /// Returns the maximal leading run of `chain` present in the cache, in
    /// chain order, stopping at the first absent hash. Refreshes
    /// `last_used` of every returned entry.
    pub fn lookup_longest_prefix(&mut self, chain: &[PrefixHash]) -> Vec<CacheEntry> {
        self.clock += 1;
        let now = self.clock;
        let mut hits = Vec::new();
        for key in chain {
            match self.entries.get_mut(&key.value) {
                Some(entry) => {
                    entry.last_used = now;
                    hits.push(entry.clone());
                }
                None => break,
            }
        }
        hits
    }

    /// Creates entries for `new_chain`, owned by `owner`, unflagged, at the
    /// current clock. Evicts LRU entries as needed to restore the capacity
    /// invariant. Inserting a present key is a contract violation.
    pub fn insert_blocks(
        &mut self,
        new_chain: &[(PrefixHash, usize)],
        owner: UserId,
    ) -> Result<(), CacheError> {
        self.clock += 1;
        let now = self.clock;
        for (key, block_index) in new_chain {
            if self.entries.contains_key(&key.value) {
                return Err(CacheError::DuplicateInsert(key.value));
            }
            self.entries.insert(
                key.value,
                CacheEntry {
                    key: *key,
                    block_index: *block_index,
                    owner_id: owner,
                    attack_flag: false,
                    last_used: now,
                },
            );
        }
        if self.entries.len() > self.capacity_blocks {
            let excess = self.entries.len() - self.capacity_blocks;
            self.evict_lru(excess)?;
        }
        Ok(())
    }

    /// Removes the `count` least-recently-used entries; ties broken by
    /// smaller hash value. Flags and ownership die with the entry.
    pub fn evict_lru(&mut self, count: usize) -> Result<(), CacheError> {
        if count > self.entries.len() {
            return Err(CacheError::EvictTooMany {
                count,
                len: self.entries.len(),
            });
        }
        let mut order: Vec<(u64, u64)> = self
            .entries
            .values()
            .map(|e| (e.last_used, e.key.value))
            .collect();
        order.sort_unstable();
        for (_, value) in order.into_iter().take(count) {
            self.entries.remove(&value);
        }
        Ok(())
    }

    /// Sets the attack flag on a present entry. Idempotent; the flag never
    /// clears within an entry's lifetime.
    pub fn flag_entry(&mut self, key: &PrefixHash) -> Result<(), CacheError> {
        match self.entries.get_mut(&key.value) {
            Some(entry) => {
                entry.attack_flag = true;
                Ok(())
            }
            None => Err(CacheError::FlagAbsentKey(key.value)),
        }
    }

    /// Entries sorted by (last_used, hash value) for deterministic export.
    pub fn dump(&self) -> Vec<CacheEntry> {
        let mut all: Vec<CacheEntry> = self.entries.values().cloned().collect();
        all.sort_by_key(|e| (e.last_used, e.key.value));
        all
    }
}

/// JSONL row for the cache dump export.
#[derive(Debug, Serialize)]
pub struct CacheDumpRow {
    pub key: u64,
    pub namespace: Namespace,
    pub block_index: usize,
    pub owner: u32,
    pub flag: bool,
    pub last_used: u64,
}

impl From<&CacheEntry> for CacheDumpRow {
    fn from(e: &CacheEntry) -> Self {
        Self {
            key: e.key.value,
            namespace: e.key.namespace,
            block_index: e.block_index,
            owner: e.owner_id.0,
            flag: e.attack_flag,
            last_used: e.last_used,
        }
    }
}
