//! Static replay of a program's memory traffic: bounds, read-before-write,
//! and the peak number of live local vectors.

use thiserror::Error;

use super::{Region, TcuInstruction, TcuProgram};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("pc {pc}: {region}[{addr}] is outside the region (depth {depth})")]
    OutOfBounds { pc: usize, region: Region, addr: u64, depth: u32 },
    #[error("pc {pc}: {region}[{addr}] read before any write")]
    Uninitialized { pc: usize, region: Region, addr: u32 },
    #[error("pc {pc}: MatMul before any LoadWeights")]
    NoWeights { pc: usize },
    #[error("pc {pc}: zero vector count")]
    EmptyCount { pc: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    /// Most local vectors holding a value that is still to be read.
    pub local_peak: usize,
    pub reads: u64,
    pub writes: u64,
}

struct Tracker {
    depth: [u32; 4],
    written: [Vec<bool>; 4],
    /// Per local address: pc of the current value's write and of its last read.
    local_value: Vec<Option<(usize, usize)>>,
    local_intervals: Vec<(usize, usize)>,
    reads: u64,
    writes: u64,
}

impl Tracker {
    fn bounds(&self, pc: usize, region: Region, addr: u32, count: u32) -> Result<(), ReplayError> {
        let end = addr as u64 + count as u64;
        let depth = self.depth[region as usize];
        if count == 0 {
            return Err(ReplayError::EmptyCount { pc });
        }
        if end > depth as u64 {
            return Err(ReplayError::OutOfBounds { pc, region, addr: end - 1, depth });
        }
        Ok(())
    }

    fn grow(&mut self, region: Region, end: usize) {
        let w = &mut self.written[region as usize];
        if w.len() < end {
            w.resize(end, false);
        }
        if region == Region::Local && self.local_value.len() < end {
            self.local_value.resize(end, None);
        }
    }

    fn read(&mut self, pc: usize, region: Region, addr: u32, count: u32) -> Result<(), ReplayError> {
        self.bounds(pc, region, addr, count)?;
        self.grow(region, (addr + count) as usize);
        for a in addr..addr + count {
            if !self.written[region as usize][a as usize] {
                return Err(ReplayError::Uninitialized { pc, region, addr: a });
            }
            if region == Region::Local {
                if let Some(v) = &mut self.local_value[a as usize] {
                    v.1 = pc;
                }
            }
        }
        self.reads += count as u64;
        Ok(())
    }

    fn write(&mut self, pc: usize, region: Region, addr: u32, count: u32) -> Result<(), ReplayError> {
        self.bounds(pc, region, addr, count)?;
        self.grow(region, (addr + count) as usize);
        for a in addr..addr + count {
            self.written[region as usize][a as usize] = true;
            if region == Region::Local {
                if let Some(old) = self.local_value[a as usize].replace((pc, pc)) {
                    self.local_intervals.push(old);
                }
            }
        }
        self.writes += count as u64;
        Ok(())
    }
}

/// Replay `prog` without computing values. Constants and the input binding
/// count as initialized.
pub fn replay(prog: &TcuProgram) -> Result<ReplayReport, ReplayError> {
    let arch = &prog.arch;
    let mut t = Tracker {
        depth: [arch.dram0_depth, arch.dram1_depth, arch.local_depth, arch.acc_depth],
        written: Default::default(),
        local_value: Vec::new(),
        local_intervals: Vec::new(),
        reads: 0,
        writes: 0,
    };
    let const_vectors = (prog.constants.len() / arch.array_size as usize) as u32;
    if const_vectors > 0 {
        t.write(0, Region::Dram0, 0, const_vectors)?;
    }
    t.write(0, prog.input.region, prog.input.base, prog.input.extent)?;
    let mut weights_loaded = false;
    for (pc, instr) in prog.instructions.iter().enumerate() {
        match *instr {
            TcuInstruction::NoOp => {}
            TcuInstruction::LoadWeights { local_addr, row_count } => {
                t.read(pc, Region::Local, local_addr, row_count)?;
                weights_loaded = true;
            }
            TcuInstruction::MatMul { local_in, acc_addr, row_count, accumulate, zero_weights } => {
                if zero_weights {
                    t.bounds(pc, Region::Local, local_in, row_count)?;
                } else {
                    if !weights_loaded {
                        return Err(ReplayError::NoWeights { pc });
                    }
                    t.read(pc, Region::Local, local_in, row_count)?;
                }
                if accumulate {
                    t.read(pc, Region::Acc, acc_addr, row_count)?;
                }
                t.write(pc, Region::Acc, acc_addr, row_count)?;
            }
            TcuInstruction::DataMove { direction, src, dst, count } => {
                t.read(pc, direction.source(), src, count)?;
                t.write(pc, direction.dest(), dst, count)?;
            }
            TcuInstruction::Simd { a, b, broadcast_b, dst, count, .. } => {
                let count = count as u32;
                t.read(pc, Region::Acc, a, count)?;
                if let Some(b) = b {
                    t.read(pc, Region::Acc, b, if broadcast_b { 1 } else { count })?;
                }
                t.write(pc, Region::Acc, dst, count)?;
            }
        }
    }
    let mut intervals = std::mem::take(&mut t.local_intervals);
    intervals.extend(t.local_value.iter().flatten().copied());
    // Sweep: +1 at write, -1 after last read.
    let mut events: Vec<(usize, i32)> = intervals.iter().flat_map(|&(w, r)| [(w, 1), (r + 1, -1)]).collect();
    events.sort_unstable_by_key(|&(at, delta)| (at, delta));
    let (mut live, mut peak) = (0i32, 0i32);
    for (_, d) in events {
        live += d;
        peak = peak.max(live);
    }
    Ok(ReplayReport { local_peak: peak as usize, reads: t.reads, writes: t.writes })
}
