//! Instruction emission for a planned schedule.

use super::alloc::{plan_memory, LocalLayout, MemoryPlan};
use super::schedule::{build_schedule, HelperTile, Op, Schedule};
use super::tiling::check_arch;
use super::{
    layout_vectors, plan_tiling, CompileError, Direction, IoBinding, LayerSpan, Region, SimdOp, TcuInstruction,
    TcuProgram,
};
use crate::arch::ArchConfig;
use crate::nnir::{count_macs, ModelGraph};
use crate::quant::FixedPointFormat;

struct Emitter {
    a: u32,
    local: LocalLayout,
    code: Vec<TcuInstruction>,
}

impl Emitter {
    fn push(&mut self, i: TcuInstruction) {
        self.code.push(i);
    }

    fn mv(&mut self, direction: Direction, src: u32, dst: u32, count: u32) {
        self.push(TcuInstruction::DataMove { direction, src, dst, count });
    }

    /// Stream a weight tile stored as `a` consecutive dram0 vectors into the
    /// array, one row at a time through alternating local slots.
    fn load_tile(&mut self, base: u32) {
        for j in 0..self.a {
            let slot = self.local.weight_slots[(j % 2) as usize];
            self.mv(Direction::Dram0ToLocal, base + j, slot, 1);
            self.push(TcuInstruction::LoadWeights { local_addr: slot, row_count: 1 });
        }
    }

    /// Copy the given dram1 vectors to consecutive local addresses,
    /// coalescing contiguous source runs.
    fn stage(&mut self, srcs: impl IntoIterator<Item = u32>, dst: u32) {
        let mut run: Option<(u32, u32)> = None;
        let mut at = dst;
        for s in srcs {
            match run {
                Some((start, len)) if start + len == s => run = Some((start, len + 1)),
                _ => {
                    if let Some((start, len)) = run {
                        self.mv(Direction::Dram1ToLocal, start, at, len);
                        at += len;
                    }
                    run = Some((s, 1));
                }
            }
        }
        if let Some((start, len)) = run {
            self.mv(Direction::Dram1ToLocal, start, at, len);
        }
    }

    fn simd(&mut self, op: SimdOp, b: Option<u32>, broadcast_b: bool, count: u32) {
        self.push(TcuInstruction::Simd { op, a: 0, b, broadcast_b, dst: 0, count: count as u16 });
    }

    /// Rescale `count` accumulator rows starting at 0 and write them to dram1.
    fn store(&mut self, count: u32, dst: u32) {
        let out = self.local.out;
        self.mv(Direction::AccToLocal, 0, out, count);
        self.mv(Direction::LocalToDram1, out, dst, count);
    }
}

fn blocks(total: usize, block: u32) -> impl Iterator<Item = (u32, u32)> {
    let total = total as u32;
    (0..total).step_by(block as usize).map(move |s| (s, block.min(total - s)))
}

fn emit_code(s: &Schedule, mem: &MemoryPlan, a: u32) -> (Vec<TcuInstruction>, Vec<LayerSpan>) {
    let mut e = Emitter { a, local: LocalLayout::new(mem.stage_rows), code: Vec::new() };
    let mut spans: Vec<LayerSpan> = Vec::new();
    let base = |b: usize| mem.buffer_base[b];
    for (i, st) in s.steps.iter().enumerate() {
        let start = e.code.len();
        let bk = mem.steps[i].block;
        let y = base(st.out);
        match &st.op {
            Op::MatMul { x, tiling, relu } => {
                let (wbase, bbase) = mem.weight_base[i].unwrap();
                let kv = tiling.reduction_tiles as u32;
                let m = tiling.m as u32;
                let x = base(*x);
                for n in 0..tiling.output_tiles as u32 {
                    for (m0, mb) in blocks(tiling.m, bk) {
                        for t in 0..kv {
                            e.load_tile(wbase + (n * kv + t) * a);
                            let stage = if t % 2 == 0 { e.local.ping } else { e.local.pong };
                            e.mv(Direction::Dram1ToLocal, x + t * m + m0, stage, mb);
                            e.push(TcuInstruction::MatMul {
                                local_in: stage,
                                acc_addr: 0,
                                row_count: mb,
                                accumulate: t > 0,
                                zero_weights: false,
                            });
                        }
                        let slot = e.local.weight_slots[0];
                        e.mv(Direction::Dram0ToLocal, bbase + n, slot, 1);
                        e.mv(Direction::LocalToAcc, slot, bk, 1);
                        e.simd(SimdOp::Add, Some(bk), true, mb);
                        if *relu {
                            e.simd(SimdOp::ReluMax0, None, false, mb);
                        }
                        e.store(mb, y + n * m + m0);
                    }
                }
            }
            Op::Gather { src, map } => {
                let src = base(*src);
                let mut pairs = map.pairs.as_slice();
                for (d0, db) in blocks(map.dst_vectors, bk) {
                    let split = pairs.partition_point(|p| p.0 < d0 + db);
                    let (block, rest) = pairs.split_at(split);
                    pairs = rest;
                    e.push(TcuInstruction::MatMul {
                        local_in: e.local.ping,
                        acc_addr: 0,
                        row_count: db,
                        accumulate: false,
                        zero_weights: true,
                    });
                    let mut by_tile: Vec<(usize, u32, u32)> = block.iter().map(|&(d, s, h)| (h, d, s)).collect();
                    by_tile.sort_unstable();
                    for group in by_tile.chunk_by(|x, y| x.0 == y.0) {
                        e.load_tile(mem.helper_base[group[0].0]);
                        for run in group.chunk_by(|x, y| x.1 + 1 == y.1) {
                            let ping = e.local.ping;
                            e.stage(run.iter().map(|r| src + r.2), ping);
                            e.push(TcuInstruction::MatMul {
                                local_in: ping,
                                acc_addr: run[0].1 - d0,
                                row_count: run.len() as u32,
                                accumulate: true,
                                zero_weights: false,
                            });
                        }
                    }
                    e.store(db, y + d0);
                }
            }
            Op::MaxPool { src, chunks, p_in, p_out, taps, windows } => {
                let src = base(*src);
                for cv in 0..*chunks as u32 {
                    for (o0, ob) in blocks(*p_out, bk) {
                        for w in 0..*taps {
                            let srcs =
                                (o0..o0 + ob).map(|o| src + cv * *p_in as u32 + windows[o as usize * taps + w] as u32);
                            let ping = e.local.ping;
                            e.stage(srcs, ping);
                            let acc = if w == 0 { 0 } else { bk };
                            e.mv(Direction::LocalToAcc, ping, acc, ob);
                            if w > 0 {
                                e.simd(SimdOp::Max, Some(bk), false, ob);
                            }
                        }
                        e.store(ob, y + cv * *p_out as u32 + o0);
                    }
                }
            }
            Op::Gap { src, chunks, positions, diag } => {
                let src = base(*src);
                e.load_tile(mem.helper_base[*diag]);
                for cv in 0..*chunks as u32 {
                    for (p0, pb) in blocks(*positions, mem.stage_rows) {
                        let ping = e.local.ping;
                        e.mv(Direction::Dram1ToLocal, src + cv * *positions as u32 + p0, ping, pb);
                        for r in 0..pb {
                            e.push(TcuInstruction::MatMul {
                                local_in: ping + r,
                                acc_addr: 0,
                                row_count: 1,
                                accumulate: p0 + r > 0,
                                zero_weights: false,
                            });
                        }
                    }
                    e.store(1, y + cv);
                }
            }
            Op::Add { a: xa, b: xb, relu } => {
                let (xa, xb) = (base(*xa), base(*xb));
                for (v0, vb) in blocks(s.buffers[st.out].vectors, bk) {
                    let (ping, pong) = (e.local.ping, e.local.pong);
                    e.mv(Direction::Dram1ToLocal, xa + v0, ping, vb);
                    e.mv(Direction::LocalToAcc, ping, 0, vb);
                    e.mv(Direction::Dram1ToLocal, xb + v0, pong, vb);
                    e.mv(Direction::LocalToAcc, pong, bk, vb);
                    e.simd(SimdOp::Add, Some(bk), false, vb);
                    if *relu {
                        e.simd(SimdOp::ReluMax0, None, false, vb);
                    }
                    e.store(vb, y + v0);
                }
            }
            Op::Relu { src } => {
                let src = base(*src);
                for (v0, vb) in blocks(s.buffers[st.out].vectors, bk) {
                    let ping = e.local.ping;
                    e.mv(Direction::Dram1ToLocal, src + v0, ping, vb);
                    e.mv(Direction::LocalToAcc, ping, 0, vb);
                    e.simd(SimdOp::ReluMax0, None, false, vb);
                    e.store(vb, y + v0);
                }
            }
        }
        match spans.last_mut() {
            Some(last) if last.name == st.label => last.end = e.code.len(),
            _ => spans.push(LayerSpan { name: st.label.clone(), start, end: e.code.len() }),
        }
    }
    (e.code, spans)
}

/// Raw dram0 image: weight tiles and biases per matmul step, then helper tiles.
fn constants(g: &ModelGraph, s: &Schedule, mem: &MemoryPlan, fmt: FixedPointFormat, a: usize) -> Vec<i32> {
    let len = mem.peak(Region::Dram0) as usize * a;
    let mut img = vec![0i32; len];
    for (i, st) in s.steps.iter().enumerate() {
        let Op::MatMul { tiling, .. } = &st.op else { continue };
        let (wbase, bbase) = mem.weight_base[i].unwrap();
        let w = &g.weights()[&tiling.layer];
        let (k, n) = (tiling.k, tiling.n);
        for nt in 0..tiling.output_tiles {
            for t in 0..tiling.reduction_tiles {
                let tile = wbase as usize + (nt * tiling.reduction_tiles + t) * a;
                for j in 0..a {
                    for c in 0..a {
                        let (row, col) = (t * a + j, nt * a + c);
                        if row < k && col < n {
                            img[(tile + j) * a + c] = fmt.quantize(w.kernel[row * n + col]);
                        }
                    }
                }
            }
            for c in 0..a {
                let col = nt * a + c;
                if col < n {
                    img[(bbase as usize + nt) * a + c] = fmt.quantize(w.bias[col]);
                }
            }
        }
    }
    for (h, tile) in s.helpers.iter().enumerate() {
        let at = mem.helper_base[h] as usize * a;
        match tile {
            HelperTile::Select(pairs) => {
                let one = fmt.one_raw().expect("checked when the gather was built");
                for &(j, c) in pairs {
                    img[at + j as usize * a + c as usize] = one;
                }
            }
            HelperTile::Diag(p) => {
                let q = fmt.quantize(1.0 / *p as f64);
                for j in 0..a {
                    img[at + j * a + j] = q;
                }
            }
        }
    }
    img
}

/// Compile `g` for `arch`.
pub fn lower(g: &ModelGraph, arch: &ArchConfig) -> Result<TcuProgram, CompileError> {
    check_arch(arch)?;
    let fmt = arch.format()?;
    let plan = plan_tiling(g, arch)?;
    let sched = build_schedule(g, &plan, fmt)?;
    let mem = plan_memory(&sched, arch)?;
    let a = arch.array_size;
    let (instructions, spans) = emit_code(&sched, &mem, a);
    let binding = |buf: usize, shape: &crate::nnir::TensorShape| IoBinding {
        region: Region::Dram1,
        base: mem.buffer_base[buf],
        extent: layout_vectors(shape, a as usize) as u32,
        shape: shape.clone(),
    };
    Ok(TcuProgram {
        model_name: g.name().to_string(),
        arch: arch.clone(),
        constants: constants(g, &sched, &mem, fmt, a as usize),
        instructions,
        input: binding(sched.input, g.input_shape()),
        output: binding(sched.output, g.output_shape()),
        graph_macs: count_macs(g).total_macs,
        spans,
    })
}
