// SPDX-License-Identifier: Apache-2.0

//! Sliding-window latency percentiles.

use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub const DEFAULT_WINDOW: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    /// Requests currently in the window.
    pub count: usize,
    pub p50: Option<f64>,
    pub p95: Option<f64>,
    pub p99: Option<f64>,
}

/// Nearest-rank percentile of ascending `sorted`, with `permille` in
/// (0, 1000]: the value at 1-based rank `ceil(permille * n / 1000)`.
pub fn nearest_rank(sorted: &[f64], permille: usize) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (permille * sorted.len()).div_ceil(1000).max(1);
    Some(sorted[rank.min(sorted.len()) - 1])
}

#[derive(Debug)]
pub struct LatencyWindow {
    capacity: usize,
    samples: Mutex<VecDeque<f64>>,
}

impl LatencyWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        LatencyWindow {
            capacity,
            samples: Mutex::new(VecDeque::with_capacity(capacity.min(DEFAULT_WINDOW))),
        }
    }

    pub fn record(&self, ms: f64) {
        let mut s = self.samples.lock().expect("latency lock");
        if s.len() == self.capacity {
            s.pop_front();
        }
        s.push_back(ms);
    }

    pub fn stats(&self) -> LatencyStats {
        let mut v: Vec<f64> = self
            .samples
            .lock()
            .expect("latency lock")
            .iter()
            .copied()
            .collect();
        v.sort_by(f64::total_cmp);
        LatencyStats {
            count: v.len(),
            p50: nearest_rank(&v, 500),
            p95: nearest_rank(&v, 950),
            p99: nearest_rank(&v, 990),
        }
    }
}

impl Default for LatencyWindow {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}
