//! The mdbook guide's chapters, included as doc comments so `cargo test
//! --doc` compiles and runs every code snippet in the book.

#[doc = include_str!("../../../book/src/blocks-and-hashes.md")]
pub mod blocks_and_hashes {}

#[doc = include_str!("../../../book/src/prefix-cache.md")]
pub mod prefix_cache {}

#[doc = include_str!("../../../book/src/detection.md")]
pub mod detection {}

#[doc = include_str!("../../../book/src/activation.md")]
pub mod activation {}

#[doc = include_str!("../../../book/src/latency-and-load.md")]
pub mod latency_and_load {}

#[doc = include_str!("../../../book/src/workloads-and-attacks.md")]
pub mod workloads_and_attacks {}

#[doc = include_str!("../../../book/src/running-experiments.md")]
pub mod running_experiments {}
