//! Trace file emission and re-ingestion.
//!
//! Every JSONL file opens with a schema header line, followed by one
//! record per line. Writers are deterministic: identical results always
//! serialize to identical bytes. The overhead report is the one
//! deliberately non-deterministic artifact (it contains wall-clock
//! measurements) and lives in its own file so everything else can be
//! compared byte for byte across runs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheDumpRow, PrefixCache};
use crate::config::SCHEMA_VERSION;
use crate::engine::{ActivatorRow, DecisionRow, OverheadSamples, RequestOutcome};
use crate::summary::{percentile, Summary};
use crate::token::UserId;
use crate::workload::Request;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed {kind} file {path}: {message}")]
    Malformed {
        path: String,
        kind: String,
        message: String,
    },
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct JsonlHeader {
    schema_version: u32,
    kind: String,
}

fn io_err(path: &Path, source: std::io::Error) -> ReportError {
    ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_jsonl<T: Serialize>(path: &Path, kind: &str, rows: &[T]) -> Result<(), ReportError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let header = JsonlHeader {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_string(),
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| io_err(path, e.into()))?;
    out.write_all(b"\n").map_err(|e| io_err(path, e))?;
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(|e| io_err(path, e.into()))?;
        out.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Vec<T>, ReportError> {
    let malformed = |message: String| ReportError::Malformed {
        path: path.display().to_string(),
        kind: kind.to_string(),
        message,
    };
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| malformed("empty file".into()))?
        .map_err(|e| io_err(path, e))?;
    let header: JsonlHeader =
        serde_json::from_str(&header_line).map_err(|e| malformed(format!("bad header: {e}")))?;
    if header.kind != kind || header.schema_version != SCHEMA_VERSION {
        return Err(malformed(format!(
            "expected kind {kind:?} schema {SCHEMA_VERSION}, got {:?} schema {}",
            header.kind, header.schema_version
        )));
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?);
    }
    Ok(rows)
}

pub fn write_outcomes(path: &Path, rows: &[RequestOutcome]) -> Result<(), ReportError> {
    write_jsonl(path, "outcomes", rows)
}

pub fn read_outcomes(path: &Path) -> Result<Vec<RequestOutcome>, ReportError> {
    read_jsonl(path, "outcomes")
}

pub fn write_decisions(path: &Path, rows: &[DecisionRow]) -> Result<(), ReportError> {
    write_jsonl(path, "decisions", rows)
}

pub fn write_activator_trace(path: &Path, rows: &[ActivatorRow]) -> Result<(), ReportError> {
    write_jsonl(path, "activator", rows)
}

pub fn write_workload(path: &Path, rows: &[Request]) -> Result<(), ReportError> {
    write_jsonl(path, "workload", rows)
}

pub fn read_workload(path: &Path) -> Result<Vec<Request>, ReportError> {
    read_jsonl(path, "workload")
}

pub fn write_cache_dump(path: &Path, cache: &PrefixCache) -> Result<(), ReportError> {
    let rows: Vec<CacheDumpRow> = cache.dump().iter().map(CacheDumpRow::from).collect();
    write_jsonl(path, "cache", &rows)
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<(), ReportError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, summary).map_err(|e| io_err(path, e.into()))?;
    out.write_all(b"\n").map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_summary(path: &Path) -> Result<Summary, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| ReportError::Malformed {
        path: path.display().to_string(),
        kind: "summary".into(),
        message: e.to_string(),
    })
}

/// Aggregated wall-clock statistics for one component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingStats {
    pub samples: usize,
    pub median_us: f64,
    pub mean_us: f64,
    pub p99_us: f64,
}

impl TimingStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mean = if samples.is_empty() {
            0.0
        } else {
            samples.iter().sum::<f64>() / samples.len() as f64
        };
        Self {
            samples: samples.len(),
            median_us: percentile(samples, 0.50),
            mean_us: mean,
            p99_us: percentile(samples, 0.99),
        }
    }
}

/// The overhead report: per-request decision costs plus the memory cost of
/// the cache-entry metadata (owner id and attack flag, two machine words)
/// and of one activator window sample (one f64).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverheadReport {
    pub schema_version: u32,
    pub detector: TimingStats,
    pub activator: TimingStats,
    pub metadata_bytes_per_entry: usize,
    pub window_bytes_per_sample: usize,
}

impl OverheadReport {
    pub fn from_samples(samples: &OverheadSamples) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            detector: TimingStats::from_samples(&samples.detector_us),
            activator: TimingStats::from_samples(&samples.activator_us),
            metadata_bytes_per_entry: metadata_bytes_per_entry(),
            window_bytes_per_sample: std::mem::size_of::<f64>(),
        }
    }
}

/// Size of the per-entry defense metadata: owner id plus attack flag,
/// padded. Bounded by two machine words.
pub fn metadata_bytes_per_entry() -> usize {
    std::mem::size_of::<UserId>() + std::mem::size_of::<bool>()
}

pub fn write_overhead(path: &Path, report: &OverheadReport) -> Result<(), ReportError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, report).map_err(|e| io_err(path, e.into()))?;
    out.write_all(b"\n").map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}
