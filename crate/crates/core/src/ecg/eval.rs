use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BeatRecord, Dataset, EcgError, MetricsReport, BEAT_LEN, NUM_CLASSES};
use crate::arch::ArchConfig;
use crate::compiler::{lower, TcuProgram};
use crate::nnir::{execute_float, execute_quant, quantize_input, ModelGraph, Tensor};
use crate::tcusim::{run, SimReport};

/// Which executor produces the logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Double-precision reference.
    Float,
    /// Fixed-point reference in the architecture's format.
    Quant,
    /// Compile, then simulate.
    Compiled,
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "float" => Ok(Self::Float),
            "quant" => Ok(Self::Quant),
            "compiled" => Ok(Self::Compiled),
            _ => Err(format!("unknown mode `{s}` (float, quant, compiled)")),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Float => "float",
            Self::Quant => "quant",
            Self::Compiled => "compiled",
        })
    }
}

fn check_model(model: &ModelGraph) -> Result<(), EcgError> {
    if model.input_shape().elements() != BEAT_LEN {
        return Err(EcgError::ModelInput(model.input_shape().elements()));
    }
    if model.output_shape().elements() != NUM_CLASSES {
        return Err(EcgError::ModelOutput(model.output_shape().elements()));
    }
    Ok(())
}

fn beat_tensor(model: &ModelGraph, r: &BeatRecord) -> Tensor {
    Tensor { shape: model.input_shape().clone(), data: r.samples.clone() }
}

fn infer(
    model: &ModelGraph,
    prog: Option<&TcuProgram>,
    arch: &ArchConfig,
    mode: EvalMode,
    r: &BeatRecord,
) -> Result<(Vec<f64>, Option<SimReport>), EcgError> {
    let x = beat_tensor(model, r);
    Ok(match mode {
        EvalMode::Float => (execute_float(model, &x)?.data, None),
        EvalMode::Quant => (execute_quant(model, &quantize_input(&x, arch.format()?))?.dequantize(), None),
        EvalMode::Compiled => {
            let prog = prog.expect("compiled mode has a program");
            let (y, rep) = run(prog, &quantize_input(&x, arch.format()?))?;
            (y.dequantize(), Some(rep))
        }
    })
}

/// Output logits for each record, in record order.
pub fn logits(
    model: &ModelGraph,
    records: &[BeatRecord],
    arch: &ArchConfig,
    mode: EvalMode,
) -> Result<Vec<Vec<f64>>, EcgError> {
    check_model(model)?;
    let prog = match mode {
        EvalMode::Compiled => Some(lower(model, arch)?),
        _ => None,
    };
    records.par_iter().map(|r| infer(model, prog.as_ref(), arch, mode, r).map(|(l, _)| l)).collect()
}

/// Index of the largest logit (first on ties).
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Classify every record and tally a confusion matrix.
pub fn evaluate(
    model: &ModelGraph,
    ds: &Dataset,
    arch: &ArchConfig,
    mode: EvalMode,
) -> Result<MetricsReport, EcgError> {
    if ds.is_empty() {
        return Err(EcgError::Empty);
    }
    let l = logits(model, &ds.records, arch, mode)?;
    Ok(MetricsReport::from_pairs(NUM_CLASSES, ds.records.iter().zip(&l).map(|(r, l)| (r.label as usize, argmax(l)))))
}

/// Compiled-inference benchmark over the first `beats` records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub beats: usize,
    pub workers: usize,
    pub clock_mhz: f64,
    pub macs_graph: u64,
    pub mean_cycles: f64,
    /// Simulated latency of one inference.
    pub latency_ms: f64,
    /// Simulated throughput, `2 × macs_graph / mean runtime`.
    pub throughput_gops: f64,
    /// Host wall-clock per simulated inference (not a TCU metric).
    pub host_ms_per_inference: f64,
    pub host_total_ms: f64,
    /// Report of the first beat's run.
    pub sim: SimReport,
    pub metrics: MetricsReport,
}

pub fn benchmark(
    model: &ModelGraph,
    ds: &Dataset,
    arch: &ArchConfig,
    beats: usize,
    workers: usize,
) -> Result<BenchReport, EcgError> {
    check_model(model)?;
    if beats == 0 || beats > ds.len() {
        return Err(EcgError::Parameter(format!("beat count must be in 1..={}, got {beats}", ds.len())));
    }
    if workers == 0 {
        return Err(EcgError::Parameter("workers must be >= 1".into()));
    }
    let prog = lower(model, arch)?;
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| EcgError::Parameter(e.to_string()))?;
    let records = &ds.records[..beats];
    let start = Instant::now();
    let results: Vec<(Vec<f64>, Option<SimReport>)> = pool.install(|| {
        records.par_iter().map(|r| infer(model, Some(&prog), arch, EvalMode::Compiled, r)).collect::<Result<_, _>>()
    })?;
    let host_total_ms = start.elapsed().as_secs_f64() * 1e3;

    let reports: Vec<&SimReport> = results.iter().map(|(_, r)| r.as_ref().unwrap()).collect();
    let mean_cycles = reports.iter().map(|r| r.total_cycles as f64).sum::<f64>() / beats as f64;
    let clock = arch.clock_mhz;
    let metrics = MetricsReport::from_pairs(
        NUM_CLASSES,
        records.iter().zip(&results).map(|(r, (l, _))| (r.label as usize, argmax(l))),
    );
    Ok(BenchReport {
        model: model.name().to_string(),
        beats,
        workers,
        clock_mhz: clock,
        macs_graph: prog.graph_macs,
        mean_cycles,
        latency_ms: mean_cycles / (clock * 1000.0),
        throughput_gops: 2.0 * prog.graph_macs as f64 / (mean_cycles / (clock * 1e6)) / 1e9,
        host_ms_per_inference: host_total_ms / beats as f64,
        host_total_ms,
        sim: reports[0].clone(),
        metrics,
    })
}
