//! Latency statistics, concurrency tracking and run reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::EventType;
use crate::runtime::dispatcher::ConcurrencyPoint;
use crate::runtime::output::{write_json_file, LatencySample};
use crate::runtime::RunOutput;
use crate::sim::AccuracyReport;

/// Summary of the latency samples of one event type, in microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub event_type: EventType,
    pub count: usize,
    pub mean_us: f64,
    pub min_us: u64,
    pub max_us: u64,
    pub p95_us: u64,
}

impl LatencyStats {
    /// `None` for an empty sample set.
    pub fn of(event_type: EventType, samples: &[u64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        // Nearest-rank percentile.
        let rank = (0.95 * n as f64).ceil() as usize;
        Some(Self {
            event_type,
            count: n,
            mean_us: sorted.iter().map(|v| *v as f64).sum::<f64>() / n as f64,
            min_us: sorted[0],
            max_us: sorted[n - 1],
            p95_us: sorted[rank.clamp(1, n) - 1],
        })
    }
}

/// Per-type statistics in [`EventType::ALL`] order, skipping absent types.
pub fn latency_table(samples: &[LatencySample]) -> Vec<LatencyStats> {
    let mut by_type: BTreeMap<EventType, Vec<u64>> = BTreeMap::new();
    for s in samples {
        by_type.entry(s.event_type).or_default().push(s.latency_us);
    }
    EventType::ALL.iter().filter_map(|t| by_type.get(t).and_then(|v| LatencyStats::of(*t, v))).collect()
}

/// Mean latency of the three event families and whether they are ordered
/// hand events first, lifecycle events next and content updates last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub hand_mean_us: f64,
    pub lifecycle_mean_us: f64,
    pub update_mean_us: f64,
    pub holds: bool,
}

fn family_mean(samples: &[LatencySample], family: &[EventType]) -> Option<f64> {
    let v: Vec<f64> = samples.iter().filter(|s| family.contains(&s.event_type)).map(|s| s.latency_us as f64).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub const HAND_EVENTS: [EventType; 2] = [EventType::HandIn, EventType::HandOut];
pub const LIFECYCLE_EVENTS: [EventType; 4] =
    [EventType::HumanEnter, EventType::HumanExit, EventType::StorageInstantiate, EventType::StorageReturn];

/// `None` unless every family has at least one sample.
pub fn ordering(samples: &[LatencySample]) -> Option<OrderingCheck> {
    let hand = family_mean(samples, &HAND_EVENTS)?;
    let lifecycle = family_mean(samples, &LIFECYCLE_EVENTS)?;
    let update = family_mean(samples, &[EventType::StorageUpdate])?;
    Some(OrderingCheck {
        hand_mean_us: hand,
        lifecycle_mean_us: lifecycle,
        update_mean_us: update,
        holds: hand > lifecycle && lifecycle > update,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcurrencySummary {
    pub cap: usize,
    pub peak_live: usize,
    pub within_cap: bool,
}

pub fn concurrency(trace: &[ConcurrencyPoint], cap: usize) -> ConcurrencySummary {
    let peak_live = trace.iter().map(|p| p.live).max().unwrap_or(0);
    ConcurrencySummary { cap, peak_live, within_cap: peak_live <= cap }
}

/// Everything reported about one engine run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub records: u64,
    pub dispatched: u64,
    pub samples: usize,
    pub latency: Vec<LatencyStats>,
    pub ordering: Option<OrderingCheck>,
    pub concurrency: ConcurrencySummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<AccuracyReport>,
}

impl RunReport {
    pub fn new(out: &RunOutput, cap: usize, accuracy: Option<AccuracyReport>) -> Self {
        let samples = &out.collected.latency;
        Self {
            records: out.stats.records,
            dispatched: out.stats.dispatched,
            samples: samples.len(),
            latency: latency_table(samples),
            ordering: ordering(samples),
            concurrency: concurrency(&out.trace, cap),
            accuracy,
        }
    }

    /// Writes `report.json`, `latency.csv` and `concurrency.csv` into `dir`.
    pub fn write(&self, dir: &Path, trace: &[ConcurrencyPoint]) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json_file(&dir.join("report.json"), self)?;
        std::fs::write(dir.join("latency.csv"), latency_csv(&[(self.concurrency.cap, self.latency.clone())]))?;
        std::fs::write(dir.join("concurrency.csv"), concurrency_csv(trace))
    }
}

pub fn latency_csv(points: &[(usize, Vec<LatencyStats>)]) -> String {
    let mut s = String::from("cap,event_type,count,mean_us,min_us,max_us,p95_us\n");
    for (cap, table) in points {
        for r in table {
            let _ = writeln!(s, "{cap},{},{},{:.3},{},{},{}", r.event_type, r.count, r.mean_us, r.min_us, r.max_us, r.p95_us);
        }
    }
    s
}

pub fn concurrency_csv(trace: &[ConcurrencyPoint]) -> String {
    let mut s = String::from("index,time,live\n");
    for p in trace {
        let _ = writeln!(s, "{},{},{}", p.index, p.time, p.live);
    }
    s
}

/// One cap setting of a latency sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub cap: usize,
    pub peak_live: usize,
    /// Mean over all samples of the run.
    pub mean_us: f64,
    pub latency: Vec<LatencyStats>,
}

impl SweepPoint {
    pub fn new(out: &RunOutput, cap: usize) -> Self {
        let samples = &out.collected.latency;
        let mean_us = if samples.is_empty() {
            0.0
        } else {
            samples.iter().map(|s| s.latency_us as f64).sum::<f64>() / samples.len() as f64
        };
        Self { cap, peak_live: concurrency(&out.trace, cap).peak_live, mean_us, latency: latency_table(samples) }
    }
}

/// Whether mean latency does not drop as the cap grows, allowing each step
/// to fall by at most `tolerance` as a fraction of the previous mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendFlag {
    pub tolerance: f64,
    pub non_decreasing: bool,
}

pub fn trend(points: &[SweepPoint], tolerance: f64) -> TrendFlag {
    let mut sorted: Vec<&SweepPoint> = points.iter().collect();
    sorted.sort_by_key(|p| p.cap);
    let non_decreasing = sorted.windows(2).all(|w| w[1].mean_us >= w[0].mean_us * (1.0 - tolerance));
    TrendFlag { tolerance, non_decreasing }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    pub trend: TrendFlag,
}

impl SweepReport {
    pub fn new(points: Vec<SweepPoint>, tolerance: f64) -> Self {
        let trend = trend(&points, tolerance);
        Self { points, trend }
    }

    /// Writes `sweep.json` and a `sweep_latency.csv` with one block per cap.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json_file(&dir.join("sweep.json"), self)?;
        let rows: Vec<(usize, Vec<LatencyStats>)> = self.points.iter().map(|p| (p.cap, p.latency.clone())).collect();
        std::fs::write(dir.join("sweep_latency.csv"), latency_csv(&rows))
    }
}
