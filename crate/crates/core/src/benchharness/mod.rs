//! Query-encoding throughput benchmark.
//!
//! Each run warms up, then encodes `num_queries` items sequentially and
//! records per-item wall-clock latency on a monotonic clock. Runs are
//! summarized column by column (throughput, total time, mean latency and five
//! latency percentiles) and aggregated across runs with a normal-approximation
//! 95% confidence interval.

mod report;

pub use report::{
    emit_figure_data, emit_report, figure_csv, figure_rows, parse_report_csv, report_csv, report_json, FigurePoint,
    FigureRow, ReportFormat,
};

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::encoder::{encode_with, EncodeOptions, EncoderWeights};
use crate::error::{Error, Result};

/// Report column names in order.
pub const COLUMNS: [&str; 8] = ["items/sec", "Full Time", "Mean Time", "95th", "50th", "5th", "99th", "75th"];

/// One value per entry of [`COLUMNS`].
pub type Columns = [f64; 8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub num_queries: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub runs: usize,
    /// Encoded before each run's timed section; excluded from statistics.
    pub warmup_queries: usize,
    /// Run every query at the full `max_len` (static shapes).
    pub pad_to_max_len: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            num_queries: 6500,
            batch_size: 1,
            max_len: 32,
            runs: 5,
            warmup_queries: 50,
            pad_to_max_len: true,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.batch_size == 0 || self.num_queries == 0 {
            return Err(Error::invalid("runs, batch_size and num_queries must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub items_per_sec: f64,
    /// Seconds spent in the timed section.
    pub full_time: f64,
    /// Mean per-item latency, seconds.
    pub mean_time: f64,
    pub p95: f64,
    pub p50: f64,
    pub p5: f64,
    pub p99: f64,
    pub p75: f64,
    pub num_items: usize,
    pub warmup_time: f64,
}

impl RunStats {
    pub fn columns(&self) -> Columns {
        [
            self.items_per_sec,
            self.full_time,
            self.mean_time,
            self.p95,
            self.p50,
            self.p5,
            self.p99,
            self.p75,
        ]
    }

    /// Builds stats from per-item latencies and the wall time that covered them.
    pub fn from_latencies(latencies: &[f64], full_time: f64) -> Result<Self> {
        if latencies.is_empty() || !(full_time > 0.0) {
            return Err(Error::invalid("need at least one timed item and positive total time"));
        }
        let n = latencies.len();
        let mut sorted = latencies.to_vec();
        sorted.sort_by(f64::total_cmp);
        let p = |q: f64| percentile_sorted(&sorted, q);
        Ok(Self {
            items_per_sec: n as f64 / full_time,
            full_time,
            mean_time: latencies.iter().sum::<f64>() / n as f64,
            p95: p(95.0),
            p50: p(50.0),
            p5: p(5.0),
            p99: p(99.0),
            p75: p(75.0),
            num_items: n,
            warmup_time: 0.0,
        })
    }
}

fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Linear interpolation between closest ranks at position `(n − 1)·p/100`.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("percentile of an empty sample"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::invalid(format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

/// Normal-approximation multiplier of the 95% interval.
pub const CI_Z: f64 = 1.96;

/// Per-column summary across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub average: Columns,
    /// Sample standard deviation (n − 1).
    pub stdev: Columns,
    /// `1.96 · stdev / √n`.
    pub ci95: Columns,
    pub lower: Columns,
    pub high: Columns,
    pub runs: usize,
    /// Set when a single run makes stdev and CI meaningless (reported as 0).
    pub single_run: bool,
}

impl AggregateStats {
    /// Derived rows in report order: average, stdev, CI, Lower, High.
    pub fn rows(&self) -> [(&'static str, &Columns); 5] {
        [
            ("average", &self.average),
            ("stdev", &self.stdev),
            ("CI", &self.ci95),
            ("Lower", &self.lower),
            ("High", &self.high),
        ]
    }
}

pub fn aggregate_columns(rows: &[Columns]) -> Result<AggregateStats> {
    if rows.is_empty() {
        return Err(Error::invalid("aggregate needs at least one run"));
    }
    let n = rows.len() as f64;
    let mut agg = AggregateStats {
        average: [0.0; 8],
        stdev: [0.0; 8],
        ci95: [0.0; 8],
        lower: [0.0; 8],
        high: [0.0; 8],
        runs: rows.len(),
        single_run: rows.len() == 1,
    };
    for c in 0..8 {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
        let sd = if rows.len() > 1 {
            (rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let ci = CI_Z * sd / n.sqrt();
        agg.average[c] = mean;
        agg.stdev[c] = sd;
        agg.ci95[c] = ci;
        agg.lower[c] = mean - ci;
        agg.high[c] = mean + ci;
    }
    Ok(agg)
}

pub fn aggregate(runs: &[RunStats]) -> Result<AggregateStats> {
    aggregate_columns(&runs.iter().map(RunStats::columns).collect::<Vec<_>>())
}

/// `candidate / baseline`.
pub fn speedup(candidate_qps: f64, baseline_qps: f64) -> Result<f64> {
    if !(baseline_qps > 0.0) {
        return Err(Error::invalid(format!("baseline throughput must be positive, got {baseline_qps}")));
    }
    Ok(candidate_qps / baseline_qps)
}

/// Anything the harness can time.
pub trait QueryEncoder {
    fn encode_batch(&mut self, texts: &[&str]) -> Result<()>;
}

/// Times [`encode_with`] on a set of weights.
pub struct WeightsEncoder<'a> {
    pub weights: &'a EncoderWeights,
    pub opts: EncodeOptions,
}

impl<'a> WeightsEncoder<'a> {
    pub fn new(weights: &'a EncoderWeights, config: &BenchConfig) -> Self {
        Self {
            weights,
            opts: EncodeOptions {
                max_len: config.max_len.min(weights.config.max_seq_len),
                batch_size: config.batch_size,
                pad_to_max_len: config.pad_to_max_len,
            },
        }
    }
}

impl QueryEncoder for WeightsEncoder<'_> {
    fn encode_batch(&mut self, texts: &[&str]) -> Result<()> {
        encode_with(self.weights, texts, self.opts).map(|_| ())
    }
}

static ACTIVE: AtomicBool = AtomicBool::new(false);

/// True while any [`run_benchmark`] call is executing in this process.
pub fn benchmark_in_progress() -> bool {
    ACTIVE.load(Ordering::SeqCst)
}

struct ActiveGuard;

impl ActiveGuard {
    fn acquire() -> Result<Self> {
        ACTIVE
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .map(|_| ActiveGuard)
            .map_err(|_| Error::Benchmark("another benchmark is already running; runs must not overlap".into()))
    }
}

impl Drop for ActiveGuard {
    fn drop(&mut self) {
        ACTIVE.store(false, Ordering::SeqCst);
    }
}

/// Smallest nonzero step observed between consecutive clock reads.
pub fn clock_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..1000 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

pub const MAX_CLOCK_RESOLUTION: Duration = Duration::from_micros(1);

fn check_clock(resolution: Duration) -> Result<()> {
    if resolution > MAX_CLOCK_RESOLUTION {
        return Err(Error::Benchmark(format!(
            "monotonic clock resolution {resolution:?} is coarser than {MAX_CLOCK_RESOLUTION:?}"
        )));
    }
    Ok(())
}

/// Runs the protocol: per run, warm up, then encode `num_queries` items in
/// batches of `batch_size`, cycling through `queries` when there are fewer.
pub fn run_benchmark<E: QueryEncoder + ?Sized>(
    encoder: &mut E,
    queries: &[String],
    config: &BenchConfig,
) -> Result<Vec<RunStats>> {
    config.validate()?;
    if queries.is_empty() {
        return Err(Error::invalid("benchmark needs at least one query"));
    }
    let _guard = ActiveGuard::acquire()?;
    check_clock(clock_resolution())?;
    if queries.len() < config.num_queries {
        log::info!("cycling {} queries to reach {}", queries.len(), config.num_queries);
    }
    let item = |i: usize| queries[i % queries.len()].as_str();
    let mut out = Vec::with_capacity(config.runs);
    for run in 0..config.runs {
        let warm_start = Instant::now();
        let mut i = 0;
        while i < config.warmup_queries {
            let end = (i + config.batch_size).min(config.warmup_queries);
            let batch: Vec<&str> = (i..end).map(item).collect();
            encoder.encode_batch(&batch)?;
            i = end;
        }
        let warmup_time = warm_start.elapsed().as_secs_f64();

        let mut latencies = Vec::with_capacity(config.num_queries);
        let start = Instant::now();
        let mut i = 0;
        while i < config.num_queries {
            let end = (i + config.batch_size).min(config.num_queries);
            let batch: Vec<&str> = (i..end).map(item).collect();
            let t0 = Instant::now();
            encoder.encode_batch(&batch)?;
            let per_item = t0.elapsed().as_secs_f64() / batch.len() as f64;
            latencies.extend(std::iter::repeat_n(per_item, batch.len()));
            i = end;
        }
        let full_time = start.elapsed().as_secs_f64();
        let mut stats = RunStats::from_latencies(&latencies, full_time)?;
        stats.warmup_time = warmup_time;
        log::info!("run {}: {:.3} items/sec", run + 1, stats.items_per_sec);
        out.push(stats);
    }
    Ok(out)
}


/// Harness runs share a process-wide guard, so unit tests that benchmark take
/// this lock first.
#[cfg(test)]
pub(crate) fn test_serial() -> std::sync::MutexGuard<'static, ()> {
    static LOCK: std::sync::Mutex<()> = std::sync::Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}
