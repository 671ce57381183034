use std::collections::BTreeMap;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CAPACITY: usize = 65536;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatencyError {
    #[error("no samples recorded")]
    NoSamples,
    #[error("quantile must lie in (0, 1], got {0}")]
    Quantile(f64),
}

/// Nearest-rank percentile: the ⌈q·n⌉-th smallest sample.
pub fn nearest_rank(samples: &[f64], q: f64) -> Result<f64, LatencyError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(LatencyError::Quantile(q));
    }
    if samples.is_empty() {
        return Err(LatencyError::NoSamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let raw = q * n as f64;
    // 0.95 * 100 is 95.00000000000001 in binary; snap near-integers first
    let rank = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw.ceil() };
    let rank = (rank as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

#[derive(Debug)]
struct Ring {
    buf: Vec<f64>,
    next: usize,
    recorded: u64,
}

impl Ring {
    fn push(&mut self, v: f64, capacity: usize) {
        if self.buf.len() < capacity {
            self.buf.push(v);
        } else {
            self.buf[self.next] = v;
        }
        self.next = (self.next + 1) % capacity;
        self.recorded += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    /// Samples ever recorded.
    pub count: u64,
    /// Samples currently held (at most the ring capacity).
    pub window: usize,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub unit: String,
    pub stages: BTreeMap<String, StageStats>,
}

/// Per-stage duration samples in milliseconds, each stage in its own ring
/// buffer. Safe for concurrent writers.
#[derive(Debug)]
pub struct LatencyRecorder {
    capacity: usize,
    stages: Mutex<BTreeMap<String, Ring>>,
}

impl Default for LatencyRecorder {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

impl LatencyRecorder {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), stages: Mutex::new(BTreeMap::new()) }
    }

    pub fn record(&self, stage: &str, ms: f64) {
        let mut stages = self.stages.lock();
        let ring = match stages.get_mut(stage) {
            Some(r) => r,
            None => stages.entry(stage.to_string()).or_insert(Ring { buf: Vec::new(), next: 0, recorded: 0 }),
        };
        ring.push(ms, self.capacity);
    }

    /// Samples currently held for `stage`, in no particular order.
    pub fn samples(&self, stage: &str) -> Vec<f64> {
        self.stages.lock().get(stage).map(|r| r.buf.clone()).unwrap_or_default()
    }

    pub fn percentile(&self, stage: &str, q: f64) -> Result<f64, LatencyError> {
        nearest_rank(&self.samples(stage), q)
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        let held: Vec<(String, u64, Vec<f64>)> =
            self.stages.lock().iter().map(|(k, r)| (k.clone(), r.recorded, r.buf.clone())).collect();
        let stages = held
            .into_iter()
            .filter(|(_, _, s)| !s.is_empty())
            .map(|(name, count, s)| {
                let p = |q| nearest_rank(&s, q).expect("non-empty");
                let stats = StageStats { count, window: s.len(), p50: p(0.5), p95: p(0.95), p99: p(0.99) };
                (name, stats)
            })
            .collect();
        MetricsSnapshot { unit: "ms".into(), stages }
    }
}
