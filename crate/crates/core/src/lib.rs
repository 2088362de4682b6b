//! Deterministic multi-tenant LLM-serving simulator focused on the timing
//! side channel created by block-based automatic prefix caching (APC).
//!
//! The crate models prompts as chains of fixed-size token blocks keyed by
//! chained prefix hashes, serves them through an LRU prefix cache extended
//! with per-entry owner/flag metadata, and drives everything with a
//! discrete-event loop over a parametric latency model. Three serving
//! policies are built in:
//!
//! * unprotected prefix caching (every block shared across users),
//! * per-user cache isolation (namespace salt per user),
//! * selective isolation: cross-user reuse is flagged, continuation past a
//!   flagged entry is blocked for non-owners, and enforcement is switched
//!   on and off by a KDE-overlap activator watching the hit/miss TTFT gap.
//!
//! Everything is seeded and replayable: identical configuration and seeds
//! produce identical traces. See the `book/` guide for a narrative tour.

pub mod activator;
pub mod cache;
pub mod config;
pub mod detector;
pub mod engine;
pub mod experiments;
pub mod kde;
pub mod latency;
pub mod presets;
pub mod report;
pub mod summary;
pub mod token;
pub mod workload;

mod guide;

pub use cache::{CacheEntry, CacheError, PrefixCache};
pub use config::{ActivatorMode, PolicyConfig, PolicyKind, ScenarioConfig, Seeds};
pub use detector::{decide_reuse, ReuseDecision};
pub use engine::{run_scenario, run_theta_sweep, RequestOutcome, ScenarioResult};
pub use token::{chain_hash, chunk_into_blocks, Block, Namespace, PrefixHash, Token, UserId};
