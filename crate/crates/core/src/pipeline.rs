//! Stream -> windows -> tallies -> metric series, plus summaries and
//! anomaly flags.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{self, AttributionPolicy, BlockRecord, TallyError};
use crate::metrics::{self, MetricError, DEFAULT_THRESHOLD};
use crate::window::{self, WindowError, WindowSpec};

pub const DEFAULT_Z_THRESHOLD: f64 = 3.0;

pub const SERIES_COLUMNS: [&str; 9] = [
    "window_label",
    "first_height",
    "last_height",
    "block_count",
    "producer_count",
    "gini",
    "entropy_bits",
    "nakamoto",
    "flags",
];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("window: {0}")]
    Window(#[from] WindowError),
    #[error("metric: {0}")]
    Tally(#[from] TallyError),
    #[error("metric: {0}")]
    Metric(#[from] MetricError),
    #[error("window: stream produced no windows")]
    NoWindows,
    #[error("anomaly detection needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("cannot summarize an empty series")]
    EmptySeries,
    #[error("z threshold must be positive and finite, got {0}")]
    InvalidZ(f64),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("series file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Gini,
    EntropyBits,
    Nakamoto,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Gini, Metric::EntropyBits, Metric::Nakamoto];

    pub fn of(self, point: &MetricPoint) -> f64 {
        match self {
            Metric::Gini => point.gini,
            Metric::EntropyBits => point.entropy_bits,
            Metric::Nakamoto => point.nakamoto as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Gini => "gini",
            Metric::EntropyBits => "entropy_bits",
            Metric::Nakamoto => "nakamoto",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub window_label: String,
    pub first_height: u64,
    pub last_height: u64,
    pub block_count: usize,
    pub producer_count: usize,
    pub gini: f64,
    pub entropy_bits: f64,
    pub nakamoto: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Population standard deviation.
    pub stddev: f64,
}

impl Stats {
    fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = (values.iter().sum::<f64>() / n).clamp(min, max);
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            min,
            max,
            stddev: var.sqrt(),
        })
    }

    fn is_degenerate(&self) -> bool {
        self.stddev <= 1e-12 * self.mean.abs().max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub points: usize,
    pub gini: Stats,
    pub entropy_bits: Stats,
    pub nakamoto: Stats,
}

impl Summary {
    pub fn get(&self, metric: Metric) -> &Stats {
        match metric {
            Metric::Gini => &self.gini,
            Metric::EntropyBits => &self.entropy_bits,
            Metric::Nakamoto => &self.nakamoto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub window: usize,
    pub metric: Metric,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSeries {
    pub points: Vec<MetricPoint>,
    pub summary: Summary,
    pub anomalies: Vec<Anomaly>,
    /// Empty calendar buckets inside the covered range.
    pub gaps: Vec<String>,
    /// Trailing blocks not covered by a full sliding window.
    pub dropped_blocks: usize,
}

impl MetricSeries {
    /// Metrics flagged on the point at `window`, in [`Metric::ALL`] order.
    pub fn flags_for(&self, window: usize) -> Vec<Metric> {
        let mut flags: Vec<Metric> = self
            .anomalies
            .iter()
            .filter(|a| a.window == window)
            .map(|a| a.metric)
            .collect();
        flags.sort();
        flags.dedup();
        flags
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunParams {
    pub policy: AttributionPolicy,
    pub window: WindowSpec,
    pub threshold: f64,
    /// Worker threads for per-window metrics; 0 means one per available core.
    pub jobs: usize,
}

impl RunParams {
    pub fn new(window: WindowSpec) -> Self {
        Self {
            policy: AttributionPolicy::default(),
            window,
            threshold: DEFAULT_THRESHOLD,
            jobs: 0,
        }
    }
}

/// Computes one metric point per window, in window order.
///
/// Windows are measured in parallel and reassembled by index, so the
/// output does not depend on `jobs`.
pub fn run(blocks: &[BlockRecord], params: &RunParams) -> Result<MetricSeries, PipelineError> {
    if !(params.threshold > 0.0 && params.threshold <= 1.0) {
        return Err(MetricError::InvalidThreshold(params.threshold).into());
    }
    if blocks.is_empty() {
        return Err(PipelineError::NoWindows);
    }
    let windowing = window::windows(blocks, &params.window)?;
    if windowing.windows.is_empty() {
        return Err(PipelineError::NoWindows);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(params.jobs)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let points: Vec<MetricPoint> = pool.install(|| {
        windowing
            .windows
            .par_iter()
            .map(|w| {
                let tally = block::tally(w.blocks(), params.policy)?;
                let m = metrics::compute_all(&tally, params.threshold)?;
                Ok(MetricPoint {
                    window_label: w.label.clone(),
                    first_height: w.first_height,
                    last_height: w.last_height,
                    block_count: w.len(),
                    producer_count: m.producer_count,
                    gini: m.gini,
                    entropy_bits: m.entropy_bits,
                    nakamoto: m.nakamoto,
                })
            })
            .collect::<Result<_, PipelineError>>()
    })?;

    let summary = summarize(&points)?;
    Ok(MetricSeries {
        points,
        summary,
        anomalies: Vec::new(),
        gaps: windowing.gaps,
        dropped_blocks: windowing.dropped_blocks,
    })
}

/// Mean, min, max and population standard deviation of each metric.
pub fn summarize(points: &[MetricPoint]) -> Result<Summary, PipelineError> {
    if points.is_empty() {
        return Err(PipelineError::EmptySeries);
    }
    let stats = |m: Metric| {
        let values: Vec<f64> = points.iter().map(|p| m.of(p)).collect();
        Stats::from_values(&values).expect("non-empty")
    };
    Ok(Summary {
        points: points.len(),
        gini: stats(Metric::Gini),
        entropy_bits: stats(Metric::EntropyBits),
        nakamoto: stats(Metric::Nakamoto),
    })
}

/// Replaces the series' anomaly flags with every (point, metric) whose
/// z-score magnitude exceeds `z_threshold`. Metrics with zero variance are
/// never flagged.
pub fn flag_anomalies(
    mut series: MetricSeries,
    z_threshold: f64,
) -> Result<MetricSeries, PipelineError> {
    if !(z_threshold.is_finite() && z_threshold > 0.0) {
        return Err(PipelineError::InvalidZ(z_threshold));
    }
    if series.points.len() < 3 {
        return Err(PipelineError::TooFewPoints(series.points.len()));
    }
    series.summary = summarize(&series.points)?;
    let mut anomalies = Vec::new();
    for (idx, point) in series.points.iter().enumerate() {
        for metric in Metric::ALL {
            let stats = series.summary.get(metric);
            if stats.is_degenerate() {
                continue;
            }
            let z = (metric.of(point) - stats.mean) / stats.stddev;
            if z.abs() > z_threshold {
                anomalies.push(Anomaly {
                    window: idx,
                    metric,
                    z,
                });
            }
        }
    }
    series.anomalies = anomalies;
    Ok(series)
}

/// Fixed-point rendering with nine significant digits.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{:.8}", if x == 0.0 { 0.0 } else { x });
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding can carry into a new leading digit (9.99999999995 -> 10.0000000).
    let digits = s.chars().filter(char::is_ascii_digit).collect::<String>();
    if digits.trim_start_matches('0').len() > 9 && decimals > 0 {
        format!("{:.*}", decimals - 1, x)
    } else {
        s
    }
}

fn flags_cell(series: &MetricSeries, idx: usize) -> String {
    series
        .flags_for(idx)
        .iter()
        .map(|m| m.name())
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_series_csv<W: Write>(sink: W, series: &MetricSeries) -> Result<(), PipelineError> {
    let mut w = csv::WriterBuilder::new().from_writer(sink);
    let csv_err = |e: csv::Error| PipelineError::Io(e.into());
    w.write_record(SERIES_COLUMNS).map_err(csv_err)?;
    for (idx, p) in series.points.iter().enumerate() {
        w.write_record([
            p.window_label.clone(),
            p.first_height.to_string(),
            p.last_height.to_string(),
            p.block_count.to_string(),
            p.producer_count.to_string(),
            format_sig9(p.gini),
            format_sig9(p.entropy_bits),
            p.nakamoto.to_string(),
            flags_cell(series, idx),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct JsonPoint<'a> {
    #[serde(flatten)]
    point: &'a MetricPoint,
    flags: String,
}

#[derive(Serialize)]
struct JsonSeries<'a> {
    points: Vec<JsonPoint<'a>>,
    summary: &'a Summary,
    anomalies: &'a [Anomaly],
    gaps: &'a [String],
    dropped_blocks: usize,
}

pub fn write_series_json<W: Write>(
    mut sink: W,
    series: &MetricSeries,
) -> Result<(), PipelineError> {
    let doc = JsonSeries {
        points: series
            .points
            .iter()
            .enumerate()
            .map(|(idx, point)| JsonPoint {
                point,
                flags: flags_cell(series, idx),
            })
            .collect(),
        summary: &series.summary,
        anomalies: &series.anomalies,
        gaps: &series.gaps,
        dropped_blocks: series.dropped_blocks,
    };
    serde_json::to_writer_pretty(&mut sink, &doc).map_err(std::io::Error::from)?;
    sink.write_all(b"\n")?;
    sink.flush()?;
    Ok(())
}

pub fn write_summary_json<W: Write>(mut sink: W, summary: &Summary) -> Result<(), PipelineError> {
    serde_json::to_writer_pretty(&mut sink, summary).map_err(std::io::Error::from)?;
    sink.write_all(b"\n")?;
    sink.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown output format {other:?}")),
        }
    }
}

/// Reads the points back from a series written by [`write_series_csv`]
/// or [`write_series_json`].
pub fn read_series<R: Read>(
    source: R,
    format: OutputFormat,
) -> Result<Vec<MetricPoint>, PipelineError> {
    match format {
        OutputFormat::Csv => {
            let mut r = csv::Reader::from_reader(source);
            let headers = r
                .headers()
                .map_err(|e| PipelineError::Format(e.to_string()))?
                .clone();
            if headers.iter().ne(SERIES_COLUMNS) {
                return Err(PipelineError::Format(format!(
                    "unexpected header {headers:?}"
                )));
            }
            r.deserialize::<CsvPoint>()
                .map(|row| {
                    row.map(MetricPoint::from)
                        .map_err(|e| PipelineError::Format(e.to_string()))
                })
                .collect()
        }
        OutputFormat::Json => {
            #[derive(Deserialize)]
            struct Doc {
                points: Vec<MetricPoint>,
            }
            let doc: Doc = serde_json::from_reader(source)
                .map_err(|e| PipelineError::Format(e.to_string()))?;
            Ok(doc.points)
        }
    }
}

#[derive(Deserialize)]
struct CsvPoint {
    window_label: String,
    first_height: u64,
    last_height: u64,
    block_count: usize,
    producer_count: usize,
    gini: f64,
    entropy_bits: f64,
    nakamoto: usize,
    #[allow(dead_code)]
    flags: String,
}

impl From<CsvPoint> for MetricPoint {
    fn from(p: CsvPoint) -> Self {
        Self {
            window_label: p.window_label,
            first_height: p.first_height,
            last_height: p.last_height,
            block_count: p.block_count,
            producer_count: p.producer_count,
            gini: p.gini,
            entropy_bits: p.entropy_bits,
            nakamoto: p.nakamoto,
        }
    }
}
