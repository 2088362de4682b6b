//! Enforcement activator: decides per request whether selective isolation
//! is on, from the distinguishability of hit vs. miss TTFT distributions.
//!
//! Completed requests are classified by reuse fraction (mostly-hit,
//! mostly-miss, or excluded) and their per-token TTFT enters a bounded
//! per-class window. Activation compares the KDE overlap of the two
//! windows against the threshold theta: enforcement is active while the
//! distributions are distinguishable (overlap below theta). While either
//! class lacks `min_samples`, the overlap is treated as 0 — maximally
//! distinguishable — so the system fails safe for any theta > 0, and
//! theta = 0 means enforcement never engages.
//!
//! The window stores no user identities; activation depends only on
//! aggregate system-level samples. Recomputing the overlap costs
//! O(window * grid), so the estimate is cached and refreshed every
//! `refresh_interval` newly recorded samples; the threshold comparison
//! itself runs at every request.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::kde::kde_overlap;

/// Classification of one completed request for the activator window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleClass {
    Hit,
    Miss,
    Excluded,
}

/// One completed request's normalized latency observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TtftSample {
    /// TTFT divided by prompt token count, in ms per token.
    pub per_token_ttft: f64,
    pub klass: SampleClass,
    /// Logical timestamp (simulation ms) of the completion.
    pub at: f64,
}

/// Activator parameters. Everything is configurable; the defaults are the
/// shipped calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActivatorConfig {
    /// Overlap threshold in [0, 1]: enforcement is active while the
    /// hit/miss overlap is below this value.
    pub theta: f64,
    /// Maximum samples retained per class.
    pub window_len: usize,
    /// Minimum per-class samples before the overlap is trusted.
    pub min_samples: usize,
    /// Reuse fraction at or above which a request counts as a hit.
    pub hit_fraction_hi: f64,
    /// Reuse fraction at or below which a request counts as a miss.
    pub hit_fraction_lo: f64,
    /// Recorded samples between overlap recomputations.
    pub refresh_interval: usize,
}

impl Default for ActivatorConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            window_len: 256,
            min_samples: 16,
            hit_fraction_hi: 0.8,
            hit_fraction_lo: 0.2,
            refresh_interval: 4,
        }
    }
}

impl ActivatorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(format!("theta must be in [0,1], got {}", self.theta));
        }
        if self.hit_fraction_lo >= self.hit_fraction_hi {
            return Err(format!(
                "hit_fraction_lo ({}) must be below hit_fraction_hi ({})",
                self.hit_fraction_lo, self.hit_fraction_hi
            ));
        }
        if self.window_len == 0 || self.min_samples == 0 || self.refresh_interval == 0 {
            return Err("window_len, min_samples and refresh_interval must be positive".into());
        }
        Ok(())
    }
}

/// Bounded FIFO windows of per-token TTFT values, one per class, plus the
/// cached overlap estimate.
#[derive(Debug, Clone, Default)]
pub struct ActivatorWindow {
    hit_samples: VecDeque<f64>,
    miss_samples: VecDeque<f64>,
    cached_overlap: Option<f64>,
    samples_since_refresh: usize,
}

impl ActivatorWindow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hit_len(&self) -> usize {
        self.hit_samples.len()
    }

    pub fn miss_len(&self) -> usize {
        self.miss_samples.len()
    }

    /// Classifies a completed request and records its per-token TTFT.
    /// Requests between the two cutoffs are excluded and leave the window
    /// untouched. Returns the class assigned.
    pub fn classify_and_record(
        &mut self,
        ttft_ms: f64,
        prompt_tokens: usize,
        reuse_fraction: f64,
        cfg: &ActivatorConfig,
    ) -> SampleClass {
        assert!(prompt_tokens >= 1, "prompt must have at least one token");
        let klass = if reuse_fraction >= cfg.hit_fraction_hi {
            SampleClass::Hit
        } else if reuse_fraction <= cfg.hit_fraction_lo {
            SampleClass::Miss
        } else {
            SampleClass::Excluded
        };
        let per_token = ttft_ms / prompt_tokens as f64;
        let queue = match klass {
            SampleClass::Hit => &mut self.hit_samples,
            SampleClass::Miss => &mut self.miss_samples,
            SampleClass::Excluded => return klass,
        };
        queue.push_back(per_token);
        while queue.len() > cfg.window_len {
            queue.pop_front();
        }
        self.samples_since_refresh += 1;
        klass
    }

    /// Current overlap estimate, or `None` while either class is below
    /// `min_samples`. Cached between refresh intervals.
    pub fn overlap(&mut self, cfg: &ActivatorConfig) -> Option<f64> {
        if self.hit_len() < cfg.min_samples || self.miss_len() < cfg.min_samples {
            self.cached_overlap = None;
            return None;
        }
        let stale = self.samples_since_refresh >= cfg.refresh_interval;
        if self.cached_overlap.is_none() || stale {
            let hits: Vec<f64> = self.hit_samples.iter().copied().collect();
            let misses: Vec<f64> = self.miss_samples.iter().copied().collect();
            // Both sides are at min_samples >= 2; the overlap cannot fail.
            self.cached_overlap = kde_overlap(&hits, &misses).ok();
            self.samples_since_refresh = 0;
        }
        self.cached_overlap
    }

    /// Whether selective isolation is enforced right now: true iff the
    /// effective overlap (0 while samples are insufficient) is below theta.
    pub fn isolation_active(&mut self, cfg: &ActivatorConfig) -> bool {
        let effective = self.overlap(cfg).unwrap_or(0.0);
        effective < cfg.theta
    }
}
