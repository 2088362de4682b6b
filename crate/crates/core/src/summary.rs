//! Metric aggregation over the outcome trace.
//!
//! Hit rate is block-weighted: reused blocks summed over requests divided
//! by total full blocks summed over requests. Percentiles use the
//! nearest-rank rule on sorted values. A summary is a pure function of the
//! outcome rows plus the exclusion list, so recomputing it from a written
//! outcomes file reproduces the original byte for byte.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::SCHEMA_VERSION;
use crate::engine::RequestOutcome;

/// One aggregate over a set of outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub requests: usize,
    pub reused_blocks: u64,
    pub total_blocks: u64,
    pub hit_rate: f64,
    pub ttft_mean: f64,
    pub ttft_p50: f64,
    pub ttft_p99: f64,
}

/// The summary record written as summary.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub policy: String,
    pub requests: usize,
    pub hit_rate: f64,
    pub ttft_mean: f64,
    pub ttft_p50: f64,
    pub ttft_p99: f64,
    pub per_user: BTreeMap<u32, MetricBlock>,
    pub excluded_users: Vec<u32>,
    /// Metrics over the outcomes with excluded users removed. Equals the
    /// top-level metrics when no exclusions were requested.
    pub filtered: MetricBlock,
}

/// Nearest-rank percentile of an unsorted sample, q in (0, 1].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn metric_block<'a>(outcomes: impl Iterator<Item = &'a RequestOutcome>) -> MetricBlock {
    let mut ttfts = Vec::new();
    let mut reused = 0u64;
    let mut total = 0u64;
    for o in outcomes {
        ttfts.push(o.ttft_ms);
        reused += o.reused_blocks as u64;
        total += o.total_blocks as u64;
    }
    let hit_rate = if total == 0 {
        0.0
    } else {
        reused as f64 / total as f64
    };
    let mean = if ttfts.is_empty() {
        0.0
    } else {
        ttfts.iter().sum::<f64>() / ttfts.len() as f64
    };
    MetricBlock {
        requests: ttfts.len(),
        reused_blocks: reused,
        total_blocks: total,
        hit_rate,
        ttft_mean: mean,
        ttft_p50: percentile(&ttfts, 0.50),
        ttft_p99: percentile(&ttfts, 0.99),
    }
}

/// Computes the summary record for a policy's outcome trace, optionally
/// excluding designated users (attackers) from the filtered block.
pub fn compute_summary(
    outcomes: &[RequestOutcome],
    policy: &str,
    exclude_users: &[u32],
) -> Summary {
    let overall = metric_block(outcomes.iter());
    let mut per_user: BTreeMap<u32, MetricBlock> = BTreeMap::new();
    let users: std::collections::BTreeSet<u32> = outcomes.iter().map(|o| o.user).collect();
    for user in users {
        per_user.insert(user, metric_block(outcomes.iter().filter(|o| o.user == user)));
    }
    let mut excluded: Vec<u32> = exclude_users.to_vec();
    excluded.sort_unstable();
    excluded.dedup();
    let filtered = metric_block(outcomes.iter().filter(|o| !excluded.contains(&o.user)));
    Summary {
        schema_version: SCHEMA_VERSION,
        policy: policy.to_string(),
        requests: overall.requests,
        hit_rate: overall.hit_rate,
        ttft_mean: overall.ttft_mean,
        ttft_p50: overall.ttft_p50,
        ttft_p99: overall.ttft_p99,
        per_user,
        excluded_users: excluded,
        filtered,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(id: u64, user: u32, reused: usize, total: usize, ttft: f64) -> RequestOutcome {
        RequestOutcome {
            request_id: id,
            user,
            prompt_tokens: total * 16,
            reused_blocks: reused,
            total_blocks: total,
            reuse_fraction: if total == 0 {
                0.0
            } else {
                reused as f64 / total as f64
            },
            ttft_ms: ttft,
            truncated: false,
            isolation_was_active: false,
        }
    }

    #[test]
    fn single_full_hit_gives_unit_hit_rate() {
        let s = compute_summary(&[outcome(0, 1, 4, 4, 10.0)], "prefix-caching", &[]);
        assert_eq!(s.hit_rate, 1.0);
        assert_eq!(s.policy, "prefix-caching");
    }

    #[test]
    fn hit_rate_is_block_weighted() {
        let outcomes = [outcome(0, 1, 4, 4, 10.0), outcome(1, 2, 0, 4, 30.0)];
        let s = compute_summary(&outcomes, "prefix-caching", &[]);
        assert_eq!(s.hit_rate, 0.5);
        assert_eq!(s.ttft_mean, 20.0);
    }

    #[test]
    fn exclusion_changes_summary_iff_excluded_outcomes_exist() {
        let outcomes = [outcome(0, 1, 4, 4, 10.0), outcome(1, 9, 0, 4, 30.0)];
        let with = compute_summary(&outcomes, "p", &[9]);
        assert_eq!(with.filtered.requests, 1);
        assert_eq!(with.filtered.hit_rate, 1.0);
        assert_eq!(with.hit_rate, 0.5, "top-level metrics keep everyone");

        let absent = compute_summary(&outcomes, "p", &[42]);
        assert_eq!(absent.filtered.requests, 2);
        assert_eq!(absent.filtered.hit_rate, absent.hit_rate);
    }

    #[test]
    fn per_user_breakdown_is_sorted_and_complete() {
        let outcomes = [
            outcome(0, 3, 1, 4, 10.0),
            outcome(1, 1, 2, 4, 20.0),
            outcome(2, 3, 3, 4, 30.0),
        ];
        let s = compute_summary(&outcomes, "p", &[]);
        let users: Vec<u32> = s.per_user.keys().copied().collect();
        assert_eq!(users, vec![1, 3]);
        assert_eq!(s.per_user[&3].requests, 2);
    }

    #[test]
    fn percentile_nearest_rank() {
        let values: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(percentile(&values, 0.50), 50.0);
        assert_eq!(percentile(&values, 0.99), 99.0);
        assert_eq!(percentile(&values, 1.0), 100.0);
        assert_eq!(percentile(&[7.0], 0.5), 7.0);
        assert_eq!(percentile(&[], 0.5), 0.0);
    }

    #[test]
    fn empty_outcomes_yield_zeroed_summary() {
        let s = compute_summary(&[], "p", &[]);
        assert_eq!(s.hit_rate, 0.0);
        assert_eq!(s.requests, 0);
    }
}
