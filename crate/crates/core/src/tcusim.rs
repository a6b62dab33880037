//! Functional and cycle-cost simulator for TCU programs.
//!
//! | instruction  | cycles                                              |
//! |--------------|-----------------------------------------------------|
//! | LoadWeights  | `row_count + 1`                                     |
//! | MatMul       | `row_count + array_size`                            |
//! | DataMove     | `count × dram_latency_factor` with a DRAM endpoint, else `count` |
//! | SIMD         | `count`                                             |
//! | NoOp         | 1                                                   |
//!
//! Instructions issue sequentially; no overlap between memory and compute
//! is modeled.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::ArchConfig;
use crate::compiler::{pack_tensor, unpack_tensor, Direction, InstrClass, Region, SimdOp, TcuInstruction, TcuProgram};
use crate::nnir::TensorShape;
use crate::quant::{FixedPointFormat, FormatError, QTensor};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("{region}[{addr}] is outside the region (depth {depth})")]
    OutOfBounds { region: Region, addr: u64, depth: u32 },
    #[error("MatMul before any LoadWeights")]
    NoWeights,
    #[error("vector count must be at least 1")]
    EmptyCount,
    #[error("SIMD {0:?} needs a second operand")]
    MissingOperand(SimdOp),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error("pc {pc} `{instruction}`: {source}")]
    Step { pc: usize, instruction: TcuInstruction, source: SimError },
    #[error("input has shape {got}, program expects {want}")]
    InputShape { got: TensorShape, want: TensorShape },
    #[error("input format {got:?} differs from the architecture format {want:?}")]
    InputFormat { got: FixedPointFormat, want: FixedPointFormat },
    #[error("{binding} binding does not fit its region: {source}")]
    Binding { binding: &'static str, source: SimError },
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Vector memory with a fixed logical depth, grown on first touch.
#[derive(Debug, Clone)]
struct VecMem<T> {
    region: Region,
    depth: u32,
    lanes: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> VecMem<T> {
    fn new(region: Region, depth: u32, lanes: usize) -> Self {
        Self { region, depth, lanes, data: Vec::new() }
    }

    fn check(&self, addr: u32, count: u32) -> Result<(), SimError> {
        if count == 0 {
            return Err(SimError::EmptyCount);
        }
        let end = addr as u64 + count as u64;
        if end > self.depth as u64 {
            return Err(SimError::OutOfBounds { region: self.region, addr: end - 1, depth: self.depth });
        }
        Ok(())
    }

    fn ensure(&mut self, end: u32) {
        let need = end as usize * self.lanes;
        if self.data.len() < need {
            self.data.resize(need, T::default());
        }
    }

    fn rows(&mut self, addr: u32, count: u32) -> Result<&[T], SimError> {
        self.check(addr, count)?;
        self.ensure(addr + count);
        Ok(&self.data[addr as usize * self.lanes..(addr + count) as usize * self.lanes])
    }

    fn rows_mut(&mut self, addr: u32, count: u32) -> Result<&mut [T], SimError> {
        self.check(addr, count)?;
        self.ensure(addr + count);
        Ok(&mut self.data[addr as usize * self.lanes..(addr + count) as usize * self.lanes])
    }
}

/// Complete machine state of one TCU.
#[derive(Debug, Clone)]
pub struct TcuState {
    arch: ArchConfig,
    fmt: FixedPointFormat,
    dram0: VecMem<i32>,
    dram1: VecMem<i32>,
    local: VecMem<i32>,
    acc: VecMem<i64>,
    /// Row-major `array_size × array_size` weight tile.
    tile: Vec<i32>,
    weights_loaded: bool,
    pub pc: usize,
}

impl TcuState {
    pub fn new(arch: &ArchConfig) -> Result<Self, FormatError> {
        let a = arch.array_size as usize;
        Ok(Self {
            fmt: arch.format()?,
            dram0: VecMem::new(Region::Dram0, arch.dram0_depth, a),
            dram1: VecMem::new(Region::Dram1, arch.dram1_depth, a),
            local: VecMem::new(Region::Local, arch.local_depth, a),
            acc: VecMem::new(Region::Acc, arch.acc_depth, a),
            tile: vec![0; a * a],
            weights_loaded: false,
            pc: 0,
            arch: arch.clone(),
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    /// Current weight tile, row-major.
    pub fn weight_tile(&self) -> &[i32] {
        &self.tile
    }

    fn mem(&mut self, region: Region) -> &mut VecMem<i32> {
        match region {
            Region::Dram0 => &mut self.dram0,
            Region::Dram1 => &mut self.dram1,
            _ => &mut self.local,
        }
    }

    /// Write raw storage values to `region` starting at vector `addr`.
    pub fn write_vectors(&mut self, region: Region, addr: u32, values: &[i32]) -> Result<(), SimError> {
        let a = self.arch.array_size as usize;
        let count = values.len().div_ceil(a) as u32;
        if region == Region::Acc {
            let rows = self.acc.rows_mut(addr, count)?;
            rows[..values.len()].iter_mut().zip(values).for_each(|(d, &v)| *d = v as i64);
        } else {
            self.mem(region).rows_mut(addr, count)?[..values.len()].copy_from_slice(values);
        }
        Ok(())
    }

    /// Raw storage values of `count` vectors of a storage region.
    pub fn read_vectors(&mut self, region: Region, addr: u32, count: u32) -> Result<Vec<i32>, SimError> {
        assert!(region != Region::Acc, "use read_acc for accumulator rows");
        Ok(self.mem(region).rows(addr, count)?.to_vec())
    }

    pub fn read_acc(&mut self, addr: u32, count: u32) -> Result<Vec<i64>, SimError> {
        Ok(self.acc.rows(addr, count)?.to_vec())
    }
}

/// Cycles charged for one instruction.
pub fn cycle_cost(instr: &TcuInstruction, arch: &ArchConfig) -> u64 {
    match *instr {
        TcuInstruction::NoOp => 1,
        TcuInstruction::LoadWeights { row_count, .. } => row_count as u64 + 1,
        TcuInstruction::MatMul { row_count, .. } => row_count as u64 + arch.array_size as u64,
        TcuInstruction::DataMove { direction, count, .. } => {
            count as u64 * if direction.touches_dram() { arch.dram_latency_factor as u64 } else { 1 }
        }
        TcuInstruction::Simd { count, .. } => count as u64,
    }
}

/// Execute one instruction; returns its cycle cost.
pub fn step(state: &mut TcuState, instr: &TcuInstruction) -> Result<u64, SimError> {
    let a = state.arch.array_size as usize;
    let fmt = state.fmt;
    match *instr {
        TcuInstruction::NoOp => {}
        TcuInstruction::LoadWeights { local_addr, row_count } => {
            let rows = state.local.rows(local_addr, row_count)?.to_vec();
            for row in rows.chunks_exact(a) {
                state.tile.rotate_left(a);
                state.tile[(a - 1) * a..].copy_from_slice(row);
            }
            state.weights_loaded = true;
        }
        TcuInstruction::MatMul { local_in, acc_addr, row_count, accumulate, zero_weights } => {
            if !zero_weights && !state.weights_loaded {
                return Err(SimError::NoWeights);
            }
            let xs = state.local.rows(local_in, row_count)?.to_vec();
            let tile = &state.tile;
            let acc = state.acc.rows_mut(acc_addr, row_count)?;
            for (x, out) in xs.chunks_exact(a).zip(acc.chunks_exact_mut(a)) {
                for c in 0..a {
                    let mut v = if accumulate { out[c] } else { 0 };
                    if !zero_weights {
                        for j in 0..a {
                            v = fmt.mac_acc(v, x[j], tile[j * a + c]);
                        }
                    }
                    out[c] = v;
                }
            }
        }
        TcuInstruction::DataMove { direction, src, dst, count } => match direction {
            Direction::AccToLocal => {
                let v: Vec<i32> = state.acc.rows(src, count)?.iter().map(|&x| fmt.rescale(x)).collect();
                state.local.rows_mut(dst, count)?.copy_from_slice(&v);
            }
            Direction::LocalToAcc => {
                let v: Vec<i64> = state.local.rows(src, count)?.iter().map(|&x| fmt.widen(x)).collect();
                state.acc.rows_mut(dst, count)?.copy_from_slice(&v);
            }
            _ => {
                let v = state.mem(direction.source()).rows(src, count)?.to_vec();
                state.mem(direction.dest()).rows_mut(dst, count)?.copy_from_slice(&v);
            }
        },
        TcuInstruction::Simd { op, a: src_a, b, broadcast_b, dst, count } => {
            let count = count as u32;
            let xa = state.acc.rows(src_a, count)?.to_vec();
            let xb = match b {
                Some(b) => Some(state.acc.rows(b, if broadcast_b { 1 } else { count })?.to_vec()),
                None if op.needs_b() => return Err(SimError::MissingOperand(op)),
                None => None,
            };
            let out = state.acc.rows_mut(dst, count)?;
            for (i, o) in out.iter_mut().enumerate() {
                let lhs = xa[i];
                let rhs = || {
                    let xb = xb.as_ref().unwrap();
                    if broadcast_b {
                        xb[i % a]
                    } else {
                        xb[i]
                    }
                };
                *o = match op {
                    SimdOp::ReluMax0 => lhs.max(0),
                    SimdOp::Move => lhs,
                    SimdOp::Add => fmt.add_acc(lhs, rhs()),
                    SimdOp::Max => lhs.max(rhs()),
                };
            }
        }
    }
    Ok(cycle_cost(instr, &state.arch))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: u64,
    pub cycles: u64,
}

/// Cycle and throughput summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub total_cycles: u64,
    pub clock_mhz: f64,
    pub latency_ms: f64,
    pub throughput_gops: f64,
    /// MACs of the source graph.
    pub macs_graph: u64,
    /// MACs issued by the array: `Σ MatMul row_count × array_size²`.
    pub macs_executed: u64,
    /// `macs_graph / macs_executed`, or 1 when nothing executed.
    pub efficiency: f64,
    pub per_class: BTreeMap<String, ClassStats>,
    /// Lower bound if memory moves fully overlapped compute within each layer.
    pub overlapped_cycles_lower_bound: u64,
}

impl SimReport {
    /// Derive the rate metrics from raw counts.
    pub fn from_counts(
        total_cycles: u64,
        clock_mhz: f64,
        macs_graph: u64,
        macs_executed: u64,
        per_class: BTreeMap<String, ClassStats>,
        overlapped_cycles_lower_bound: u64,
    ) -> Self {
        let seconds = total_cycles as f64 / (clock_mhz * 1e6);
        Self {
            total_cycles,
            clock_mhz,
            latency_ms: total_cycles as f64 / (clock_mhz * 1000.0),
            throughput_gops: if total_cycles == 0 { 0.0 } else { 2.0 * macs_graph as f64 / seconds / 1e9 },
            macs_graph,
            macs_executed,
            efficiency: if macs_executed == 0 { 1.0 } else { macs_graph as f64 / macs_executed as f64 },
            per_class,
            overlapped_cycles_lower_bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

pub fn report_format(rep: &SimReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(rep).expect("report serializes"),
        ReportFormat::Text => {
            let mut s = String::new();
            let _ = writeln!(s, "cycles          {}", rep.total_cycles);
            let _ = writeln!(s, "clock           {} MHz", rep.clock_mhz);
            let _ = writeln!(s, "latency         {:.6} ms", rep.latency_ms);
            let _ = writeln!(s, "throughput      {:.6} GOP/s", rep.throughput_gops);
            let _ = writeln!(s, "graph MACs      {}", rep.macs_graph);
            let _ = writeln!(s, "executed MACs   {}", rep.macs_executed);
            let _ = writeln!(s, "efficiency      {:.4}", rep.efficiency);
            let _ = writeln!(s, "overlap bound   {} cycles", rep.overlapped_cycles_lower_bound);
            for (class, st) in &rep.per_class {
                let _ = writeln!(s, "{class:<15} {:>8} instr {:>10} cycles", st.count, st.cycles);
            }
            s
        }
    }
}

fn is_move(i: &TcuInstruction) -> bool {
    matches!(i, TcuInstruction::DataMove { .. })
}

/// Run a compiled program on one input tensor.
pub fn run(prog: &TcuProgram, input: &QTensor) -> Result<(QTensor, SimReport), RunError> {
    let arch = &prog.arch;
    let fmt = arch.format()?;
    if input.shape() != &prog.input.shape {
        return Err(RunError::InputShape { got: input.shape().clone(), want: prog.input.shape.clone() });
    }
    if input.format() != fmt {
        return Err(RunError::InputFormat { got: input.format(), want: fmt });
    }
    let a = arch.array_size as usize;
    let mut st = TcuState::new(arch)?;
    if !prog.constants.is_empty() {
        st.write_vectors(Region::Dram0, 0, &prog.constants)
            .map_err(|source| RunError::Binding { binding: "constants", source })?;
    }
    let packed = pack_tensor(input.shape(), input.raw(), a);
    st.write_vectors(prog.input.region, prog.input.base, &packed)
        .map_err(|source| RunError::Binding { binding: "input", source })?;

    let mut per_class: BTreeMap<String, ClassStats> =
        InstrClass::ALL.iter().map(|c| (c.name().to_string(), ClassStats::default())).collect();
    let mut cycles_at = Vec::with_capacity(prog.instructions.len());
    let mut total = 0u64;
    let mut macs_executed = 0u64;
    for (pc, instr) in prog.instructions.iter().enumerate() {
        st.pc = pc;
        let c = step(&mut st, instr).map_err(|source| RunError::Step { pc, instruction: *instr, source })?;
        let e = per_class.get_mut(instr.class().name()).unwrap();
        e.count += 1;
        e.cycles += c;
        total += c;
        cycles_at.push(c);
        if let TcuInstruction::MatMul { row_count, .. } = instr {
            macs_executed += *row_count as u64 * (a * a) as u64;
        }
    }

    let mut covered = vec![false; prog.instructions.len()];
    let mut overlapped = 0u64;
    for sp in &prog.spans {
        let (mut compute, mut moves) = (0u64, 0u64);
        for pc in sp.start..sp.end.min(prog.instructions.len()) {
            covered[pc] = true;
            if is_move(&prog.instructions[pc]) {
                moves += cycles_at[pc];
            } else {
                compute += cycles_at[pc];
            }
        }
        overlapped += compute.max(moves);
    }
    overlapped += covered.iter().zip(&cycles_at).filter(|(c, _)| !**c).map(|(_, &n)| n).sum::<u64>();

    let out_raw = st
        .read_vectors(prog.output.region, prog.output.base, prog.output.extent)
        .map_err(|source| RunError::Binding { binding: "output", source })?;
    let values = unpack_tensor(&prog.output.shape, &out_raw, a);
    let out = QTensor::new(prog.output.shape.clone(), values, fmt).expect("storage memories hold in-range values");
    let report = SimReport::from_counts(total, arch.clock_mhz, prog.graph_macs, macs_executed, per_class, overlapped);
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> TcuState {
        TcuState::new(&ArchConfig::pynq_z1()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut s = state();
        let a = 8;
        for j in 0..a {
            let mut row = vec![0; a];
            row[j] = 1;
            s.write_vectors(Region::Local, 100 + j as u32, &row).unwrap();
        }
        step(&mut s, &TcuInstruction::LoadWeights { local_addr: 100, row_count: 8 }).unwrap();
        let x: Vec<i32> = (1..=8).map(|v| v * 37 - 100).collect();
        s.write_vectors(Region::Local, 0, &x).unwrap();
        let mm =
            TcuInstruction::MatMul { local_in: 0, acc_addr: 3, row_count: 1, accumulate: false, zero_weights: false };
        assert_eq!(step(&mut s, &mm).unwrap(), 1 + 8);
        assert_eq!(s.read_acc(3, 1).unwrap(), x.iter().map(|&v| v as i64).collect::<Vec<_>>());
    }

    #[test]
    fn relu_lane_op() {
        let mut s = state();
        s.write_vectors(Region::Acc, 0, &[-256, 512, 0, 0, 0, 0, 0, 0]).unwrap();
        let i = TcuInstruction::Simd { op: SimdOp::ReluMax0, a: 0, b: None, broadcast_b: false, dst: 0, count: 1 };
        assert_eq!(step(&mut s, &i).unwrap(), 1);
        assert_eq!(&s.read_acc(0, 1).unwrap()[..2], &[0, 512]);
    }

    #[test]
    fn dram_move_cost() {
        let mut s = state();
        let i = TcuInstruction::DataMove { direction: Direction::Dram1ToLocal, src: 0, dst: 0, count: 10 };
        assert_eq!(step(&mut s, &i).unwrap(), 40);
        let i = TcuInstruction::DataMove { direction: Direction::AccToLocal, src: 0, dst: 0, count: 10 };
        assert_eq!(step(&mut s, &i).unwrap(), 10);
    }

    #[test]
    fn matmul_without_weights_fails() {
        let mut s = state();
        let mm =
            TcuInstruction::MatMul { local_in: 0, acc_addr: 0, row_count: 1, accumulate: false, zero_weights: false };
        assert_eq!(step(&mut s, &mm), Err(SimError::NoWeights));
        let z =
            TcuInstruction::MatMul { local_in: 0, acc_addr: 0, row_count: 1, accumulate: false, zero_weights: true };
        assert!(step(&mut s, &z).is_ok());
    }

    #[test]
    fn bounds_are_checked() {
        let mut s = state();
        let i = TcuInstruction::DataMove { direction: Direction::LocalToAcc, src: 8191, dst: 0, count: 2 };
        assert!(matches!(step(&mut s, &i), Err(SimError::OutOfBounds { region: Region::Local, .. })));
    }

    #[test]
    fn load_weights_shifts_rows_in() {
        let mut s = state();
        for r in 0..10 {
            s.write_vectors(Region::Local, r, &[r as i32; 8]).unwrap();
        }
        step(&mut s, &TcuInstruction::LoadWeights { local_addr: 0, row_count: 10 }).unwrap();
        // The last eight rows pushed, oldest on top.
        let firsts: Vec<i32> = s.weight_tile().chunks(8).map(|r| r[0]).collect();
        assert_eq!(firsts, (2..10).collect::<Vec<_>>());
    }

    #[test]
    fn metric_formulas() {
        let r = SimReport::from_counts(100_000, 100.0, 47_560, 47_560, BTreeMap::new(), 0);
        assert_eq!(r.latency_ms, 1.0);
        assert!((r.throughput_gops - 0.09512).abs() < 1e-12);
        let r = SimReport::from_counts(1_000_000, 100.0, 1, 2, BTreeMap::new(), 0);
        assert_eq!(r.latency_ms, 10.0);
        assert_eq!(r.efficiency, 0.5);
        let json = report_format(&r, ReportFormat::Json);
        let back: SimReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert!(report_format(&r, ReportFormat::Text).contains("latency         10.000000 ms"));
    }
}
