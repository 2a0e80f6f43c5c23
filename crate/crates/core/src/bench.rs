//! Throughput measurement.
//!
//! Input is converted and bulk-assembled before the clock starts; conversion
//! is timed on its own. A warm-up pass over the first 5% of messages (at
//! least 1000) runs before the measured repetitions. While a repetition runs,
//! a sampler thread reads the completed-message counter once per interval.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cdm::{parse_record_line, RecordReader, SchemaRegistry};
use crate::datagen::GeneratedReader;
use crate::patterns::baseline::NativeRecord;
use crate::pipeline::{convert_source, run_payloads, Endpoint, PayloadMode, PipelineError, Route, RunOptions, RunStats};

/// Fraction of the input used for warm-up, and its floor.
pub const WARMUP_FRACTION: f64 = 0.05;
pub const WARMUP_MIN: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub scenario: String,
    pub threads: usize,
    pub bulk_size: usize,
    /// Messages per repetition; a bulk counts once.
    pub total_messages: u64,
    pub total_records: u64,
    /// Mean over repetitions.
    pub wall_time_seconds: f64,
    /// Completions per sampling interval, last repetition.
    pub per_second_samples: Vec<u64>,
    pub mean_tps: f64,
    /// Half-width of the 99% interval over repetition means.
    pub ci99: f64,
    pub conversion_ms: f64,
    pub repetition_tps: Vec<f64>,
    /// Counts of the last repetition.
    pub stats: RunStats,
}

impl BenchReport {
    /// Records per second, the figure comparable across bulk sizes.
    pub fn effective_records_per_second(&self) -> f64 {
        if self.total_messages == 0 {
            return 0.0;
        }
        self.mean_tps * self.total_records as f64 / self.total_messages as f64
    }
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub repetitions: usize,
    pub warmup: bool,
    pub sample_interval: Duration,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repetitions: 1,
            warmup: true,
            sample_interval: Duration::from_secs(1),
        }
    }
}

/// Which in-memory representation conversion produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConversionTarget {
    NativeObjects,
    FactTables,
}

impl From<PayloadMode> for ConversionTarget {
    fn from(m: PayloadMode) -> Self {
        match m {
            PayloadMode::Native => ConversionTarget::NativeObjects,
            PayloadMode::Table => ConversionTarget::FactTables,
        }
    }
}

fn read_all(source: &Endpoint) -> Result<Vec<Vec<u8>>, PipelineError> {
    let (reader, format): (Box<dyn BufRead>, _) = match source {
        Endpoint::FileSource { path, format } => (Box::new(BufReader::new(File::open(path)?)), *format),
        Endpoint::GeneratorSource(spec) => (
            Box::new(BufReader::new(GeneratedReader::new(spec.kind, spec.count, spec.seed))),
            crate::cdm::WireFormat::Ndjson,
        ),
        _ => return Err(PipelineError::Config("a sink cannot be read from".into())),
    };
    let mut records = RecordReader::new(reader, format);
    let mut out = Vec::new();
    while let Some((_, bytes)) = records.next_record()? {
        out.push(bytes.to_vec());
    }
    Ok(out)
}

/// Milliseconds to parse and materialize every record of `source`, input
/// bytes already in memory.
pub fn measure_conversion(
    source: &Endpoint,
    target: ConversionTarget,
    registry: &SchemaRegistry,
) -> Result<f64, PipelineError> {
    let raw = read_all(source)?;
    let start = Instant::now();
    match target {
        ConversionTarget::NativeObjects => {
            let parsed: Vec<NativeRecord> = raw.iter().filter_map(|b| NativeRecord::parse(b).ok()).collect();
            let ms = start.elapsed().as_secs_f64() * 1e3;
            drop(parsed);
            Ok(ms)
        }
        ConversionTarget::FactTables => {
            let parsed: Vec<_> = raw
                .iter()
                .filter_map(|b| std::str::from_utf8(b).ok())
                .filter_map(|t| parse_record_line(t, registry).ok())
                .collect();
            let ms = start.elapsed().as_secs_f64() * 1e3;
            drop(parsed);
            Ok(ms)
        }
    }
}

/// Mean and 99% Student-t half-width.
pub fn mean_ci99(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("valid degrees of freedom")
        .inverse_cdf(0.995);
    (mean, t * (var / n as f64).sqrt())
}

/// Runs one measured pass, sampling progress every `interval`.
fn measured_pass(
    route: &Route,
    payloads: Vec<crate::pipeline::Payload>,
    interval: Duration,
) -> Result<(RunStats, Vec<u64>), PipelineError> {
    let progress = Arc::new(AtomicU64::new(0));
    let done = Arc::new(AtomicBool::new(false));
    let sampler = {
        let progress = progress.clone();
        let done = done.clone();
        thread::spawn(move || {
            let mut samples = Vec::new();
            let mut last = 0;
            let mut next = Instant::now() + interval;
            loop {
                let finished = done.load(Ordering::Acquire);
                if !finished {
                    let now = Instant::now();
                    if now < next {
                        thread::park_timeout(next - now);
                        continue;
                    }
                    next += interval;
                }
                let cur = progress.load(Ordering::Acquire);
                if cur > last || !finished {
                    samples.push(cur - last);
                }
                last = cur;
                if finished {
                    return samples;
                }
            }
        })
    };
    let opts = RunOptions {
        collect_deliveries: false,
        progress: Some(progress),
    };
    let result = run_payloads(route, payloads, &opts);
    done.store(true, Ordering::Release);
    sampler.thread().unpark();
    let samples = sampler.join().expect("sampler panicked");
    Ok((result?, samples))
}

/// Benchmarks `route` over `source`.
pub fn run_bench(
    route: Route,
    source: &Endpoint,
    threads: usize,
    bulk_size: usize,
    options: &BenchOptions,
) -> Result<BenchReport, PipelineError> {
    if options.repetitions == 0 {
        return Err(PipelineError::Config("repetitions must be at least 1".into()));
    }
    let route = route.with_threads(threads).with_bulk_size(bulk_size);
    let conversion_ms = measure_conversion(source, route.mode().into(), route.registry())?;
    let (payloads, conversion) = convert_source(&route, source)?;
    let total_messages = payloads.len() as u64;
    let total_records = conversion.input_records - conversion.errors;

    if options.warmup && !payloads.is_empty() {
        let n = ((payloads.len() as f64 * WARMUP_FRACTION).ceil() as usize)
            .max(WARMUP_MIN / bulk_size.max(1))
            .min(payloads.len());
        run_payloads(&route, payloads[..n].to_vec(), &RunOptions::default())?;
    }

    let mut repetition_tps = Vec::with_capacity(options.repetitions);
    let mut walls = Vec::with_capacity(options.repetitions);
    let mut last = None;
    for _ in 0..options.repetitions {
        let (stats, samples) = measured_pass(&route, payloads.clone(), options.sample_interval)?;
        let wall = stats.wall.as_secs_f64();
        repetition_tps.push(if wall > 0.0 { total_messages as f64 / wall } else { 0.0 });
        walls.push(wall);
        last = Some((stats, samples));
    }
    let (stats, per_second_samples) = last.expect("at least one repetition");
    let (mean_tps, ci99) = mean_ci99(&repetition_tps);
    Ok(BenchReport {
        scenario: route.name.clone(),
        threads: route.worker_threads,
        bulk_size: route.bulk_size,
        total_messages,
        total_records,
        wall_time_seconds: walls.iter().sum::<f64>() / walls.len() as f64,
        per_second_samples,
        mean_tps,
        ci99,
        conversion_ms,
        repetition_tps,
        stats,
    })
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CsvRow {
    pub scenario: String,
    pub threads: usize,
    pub bulk_size: usize,
    pub total_messages: u64,
    pub wall_time_seconds: f64,
    pub mean_tps: f64,
    pub ci99: f64,
    pub conversion_ms: f64,
}

impl From<&BenchReport> for CsvRow {
    fn from(r: &BenchReport) -> Self {
        Self {
            scenario: r.scenario.clone(),
            threads: r.threads,
            bulk_size: r.bulk_size,
            total_messages: r.total_messages,
            wall_time_seconds: r.wall_time_seconds,
            mean_tps: r.mean_tps,
            ci99: r.ci99,
            conversion_ms: r.conversion_ms,
        }
    }
}

pub const CSV_FILE: &str = "bench.csv";

fn plot_name(r: &BenchReport) -> String {
    let safe: String = r
        .scenario
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}-t{}-b{}.dat", r.threads, r.bulk_size)
}

/// Writes `bench.csv` and one `second tps` plot file per report into `dir`.
/// Returns the paths written.
pub fn emit_report(reports: &[BenchReport], dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    if reports.is_empty() {
        return Err(PipelineError::Config("nothing to report".into()));
    }
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(CSV_FILE);
    let mut w = csv::Writer::from_path(&csv_path).map_err(io::Error::from)?;
    for r in reports {
        w.serialize(CsvRow::from(r)).map_err(io::Error::from)?;
    }
    w.flush()?;
    let mut written = vec![csv_path];
    for r in reports {
        let path = dir.join(plot_name(r));
        let mut f = io::BufWriter::new(File::create(&path)?);
        for (s, n) in r.per_second_samples.iter().enumerate() {
            writeln!(f, "{} {}", s + 1, n)?;
        }
        f.flush()?;
        written.push(path);
    }
    Ok(written)
}

pub fn load_csv(path: &Path) -> Result<Vec<CsvRow>, PipelineError> {
    let mut r = csv::Reader::from_path(path).map_err(io::Error::from)?;
    r.deserialize()
        .map(|row| row.map_err(|e| PipelineError::Io(io::Error::from(e))))
        .collect()
}
