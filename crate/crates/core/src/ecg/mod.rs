//! Heartbeat dataset pipeline: CSV ingestion, augmentation, rebalancing,
//! splitting, metrics, and inference benchmarking.
//!
//! Beat files hold one beat per row: 187 samples normalized to `[0, 1]`
//! followed by the class label `0..=4`, comma separated, no header.

mod augment;
mod eval;
mod metrics;
pub mod synth;

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::CompileError;
use crate::nnir::GraphError;
use crate::quant::FormatError;
use crate::tcusim::RunError;

pub use augment::{add_gaussian_noise, smote_resample, stratified_split, AugmentConfig};
pub use eval::{argmax, benchmark, evaluate, logits, BenchReport, EvalMode};
pub use metrics::{ClassMetrics, MetricsReport};

pub const BEAT_LEN: usize = 187;
pub const NUM_CLASSES: usize = 5;

#[derive(Debug, Error)]
pub enum EcgError {
    #[error("row {row}: expected {} columns, found {found}", BEAT_LEN + 1)]
    Columns { row: usize, found: usize },
    #[error("row {row}, column {column}: `{value}` is not a number")]
    NotNumeric { row: usize, column: usize, value: String },
    #[error("row {row}, column {column}: sample {value} outside [0, 1]")]
    SampleRange { row: usize, column: usize, value: f64 },
    #[error("row {row}: label `{value}` is not one of 0..={}", NUM_CLASSES - 1)]
    Label { row: usize, value: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("dataset is empty")]
    Empty,
    #[error("class {class} has {count} record(s); SMOTE needs at least 2")]
    SmoteClass { class: u8, count: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("model produces {0} outputs, expected {NUM_CLASSES}")]
    ModelOutput(usize),
    #[error("model input has {0} elements, expected {BEAT_LEN}")]
    ModelInput(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatRecord {
    pub samples: Vec<f64>,
    pub label: u8,
}

impl BeatRecord {
    pub fn new(samples: Vec<f64>, label: u8) -> Result<Self, EcgError> {
        if samples.len() != BEAT_LEN {
            return Err(EcgError::Parameter(format!("beat has {} samples, expected {BEAT_LEN}", samples.len())));
        }
        if label as usize >= NUM_CLASSES {
            return Err(EcgError::Parameter(format!("label {label} out of range")));
        }
        Ok(Self { samples, label })
    }
}

/// Acquisition parameters of the source recordings (informational).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingInfo {
    pub rate_hz: u32,
    pub resolution_bits: u32,
    pub range_mv: u32,
}

impl Default for SamplingInfo {
    fn default() -> Self {
        Self { rate_hz: 360, resolution_bits: 11, range_mv: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<BeatRecord>,
    /// Source file followed by each transform applied, in order.
    pub provenance: Vec<String>,
    pub sampling: SamplingInfo,
}

impl Dataset {
    pub fn new(records: Vec<BeatRecord>, source: impl Into<String>) -> Self {
        Self { records, provenance: vec![source.into()], sampling: SamplingInfo::default() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for r in &self.records {
            c[r.label as usize] += 1;
        }
        c
    }

    pub(crate) fn derive(&self, records: Vec<BeatRecord>, step: String) -> Self {
        let mut provenance = self.provenance.clone();
        provenance.push(step);
        Self { records, provenance, sampling: self.sampling }
    }
}

fn parse_label(s: &str) -> Option<u8> {
    if let Ok(v) = s.parse::<u8>() {
        return (usize::from(v) < NUM_CLASSES).then_some(v);
    }
    // Some exports write labels as floats ("1.0", "1.000000000000000000e+00").
    let f: f64 = s.parse().ok()?;
    (f.fract() == 0.0 && (0.0..NUM_CLASSES as f64).contains(&f)).then_some(f as u8)
}

/// Parse beats from any reader; `source` names it in the provenance.
pub fn read_csv(reader: impl Read, source: &str) -> Result<Dataset, EcgError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        if row.len() != BEAT_LEN + 1 {
            return Err(EcgError::Columns { row: row_no, found: row.len() });
        }
        let mut samples = Vec::with_capacity(BEAT_LEN);
        for (c, cell) in row.iter().take(BEAT_LEN).enumerate() {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| EcgError::NotNumeric {
                row: row_no,
                column: c + 1,
                value: cell.to_string(),
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(EcgError::SampleRange { row: row_no, column: c + 1, value: v });
            }
            samples.push(v);
        }
        let cell = row[BEAT_LEN].trim();
        let label = parse_label(cell).ok_or_else(|| EcgError::Label { row: row_no, value: cell.to_string() })?;
        records.push(BeatRecord { samples, label });
    }
    Ok(Dataset::new(records, source))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, EcgError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|source| EcgError::Io { path: path.display().to_string(), source })?;
    read_csv(f, &path.display().to_string())
}

/// Write beats in the same layout; floats use the shortest exact decimal
/// form, so reading the file back reproduces every value bit for bit.
pub fn write_csv_to(ds: &Dataset, writer: impl Write) -> Result<(), EcgError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for r in &ds.records {
        let mut row: Vec<String> = r.samples.iter().map(|v| v.to_string()).collect();
        row.push(r.label.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| EcgError::Io { path: "<csv writer>".into(), source })?;
    Ok(())
}

pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), EcgError> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|source| EcgError::Io { path: path.display().to_string(), source })?;
    write_csv_to(ds, std::io::BufWriter::new(f))
}
