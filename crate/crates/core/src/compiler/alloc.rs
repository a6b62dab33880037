//! Memory planning: constants in dram0, activations in dram1 with
//! first-fit reuse by liveness, a fixed staging layout in local memory, and
//! per-step accumulator ranges.

use serde::{Deserialize, Serialize};

use super::schedule::{build_schedule, Op, Schedule};
use super::tiling::check_arch;
use super::{CompileError, Region, TilingPlan};
use crate::arch::ArchConfig;
use crate::nnir::ModelGraph;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub region: Region,
    pub label: String,
    pub base: u32,
    /// Extent in vectors.
    pub extent: u32,
    /// First and last step (inclusive) during which the range is live.
    pub first_step: usize,
    pub last_step: usize,
}

impl Allocation {
    pub fn overlaps(&self, other: &Allocation) -> bool {
        self.region == other.region
            && self.base < other.base + other.extent
            && other.base < self.base + self.extent
            && self.first_step <= other.last_step
            && other.first_step <= self.last_step
    }
}

/// Per-step blocking: how many accumulator rows one block covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepPlan {
    pub label: String,
    pub block: u32,
    pub acc_extent: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryPlan {
    pub allocations: Vec<Allocation>,
    pub steps: Vec<StepPlan>,
    /// Rows in each of the three local staging areas.
    pub stage_rows: u32,
    peaks: [u32; 4],
    #[serde(skip)]
    pub(crate) buffer_base: Vec<u32>,
    #[serde(skip)]
    pub(crate) weight_base: Vec<Option<(u32, u32)>>,
    #[serde(skip)]
    pub(crate) helper_base: Vec<u32>,
}

impl MemoryPlan {
    /// Highest address in use plus one, in vectors.
    pub fn peak(&self, region: Region) -> u32 {
        self.peaks[region as usize]
    }

    pub fn in_region(&self, region: Region) -> impl Iterator<Item = &Allocation> {
        self.allocations.iter().filter(move |a| a.region == region)
    }
}

/// Local memory: two weight-row slots, then ping, pong and output staging.
pub(crate) struct LocalLayout {
    pub weight_slots: [u32; 2],
    pub ping: u32,
    pub pong: u32,
    pub out: u32,
}

impl LocalLayout {
    pub fn new(stage_rows: u32) -> Self {
        Self { weight_slots: [0, 1], ping: 2, pong: 2 + stage_rows, out: 2 + 2 * stage_rows }
    }
}

fn capacity(region: Region, layer: &str, need: u64, have: u64) -> CompileError {
    CompileError::Capacity { region, layer: layer.to_string(), need, have }
}

/// Plan memory for a graph; see [`MemoryPlan`].
pub fn allocate(g: &ModelGraph, arch: &ArchConfig, plan: &TilingPlan) -> Result<MemoryPlan, CompileError> {
    check_arch(arch)?;
    let sched = build_schedule(g, plan, arch.format()?)?;
    plan_memory(&sched, arch)
}

pub(crate) fn plan_memory(s: &Schedule, arch: &ArchConfig) -> Result<MemoryPlan, CompileError> {
    let a = arch.array_size;
    let n_steps = s.steps.len();
    let first_label = s.steps.first().map_or("", |st| st.label.as_str());
    let mut allocations = Vec::new();

    // Local staging.
    let want = s.steps.iter().map(|st| st.rows(&s.buffers)).max().unwrap_or(1).max(1) as u64;
    let stage_rows = want.min((arch.local_depth as u64).saturating_sub(2) / 3).min(u16::MAX as u64) as u32;
    if stage_rows == 0 {
        return Err(capacity(Region::Local, first_label, 5, arch.local_depth as u64));
    }
    let local = LocalLayout::new(stage_rows);
    for (label, base, extent) in [
        ("weight_rows", 0, 2),
        ("stage_ping", local.ping, stage_rows),
        ("stage_pong", local.pong, stage_rows),
        ("stage_out", local.out, stage_rows),
    ] {
        allocations.push(Allocation {
            region: Region::Local,
            label: label.into(),
            base,
            extent,
            first_step: 0,
            last_step: n_steps.saturating_sub(1),
        });
    }

    // Accumulator blocking.
    let acc = arch.acc_depth as u64;
    let mut steps = Vec::with_capacity(n_steps);
    for (i, st) in s.steps.iter().enumerate() {
        let rows = st.rows(&s.buffers) as u64;
        let cap = stage_rows as u64;
        let (block, extent, min_need) = match &st.op {
            Op::MatMul { .. } => {
                let b = rows.min(cap).min(acc.saturating_sub(1));
                (b, b + 1, 2)
            }
            Op::Gather { .. } | Op::Relu { .. } => {
                let b = rows.min(cap).min(acc);
                (b, b, 1)
            }
            Op::MaxPool { .. } | Op::Add { .. } => {
                let b = rows.min(cap).min(acc / 2);
                (b, 2 * b, 2)
            }
            Op::Gap { .. } => (1, 1, 1),
        };
        if block == 0 || acc < min_need {
            return Err(capacity(Region::Acc, &st.label, min_need, acc));
        }
        allocations.push(Allocation {
            region: Region::Acc,
            label: format!("{}.acc", st.label),
            base: 0,
            extent: extent as u32,
            first_step: i,
            last_step: i,
        });
        steps.push(StepPlan { label: st.label.clone(), block: block as u32, acc_extent: extent as u32 });
    }

    // Constants.
    let mut next: u64 = 0;
    let mut weight_base = vec![None; n_steps];
    let whole = |label: String, base: u64, extent: u64| Allocation {
        region: Region::Dram0,
        label,
        base: base as u32,
        extent: extent as u32,
        first_step: 0,
        last_step: n_steps.saturating_sub(1),
    };
    for (i, st) in s.steps.iter().enumerate() {
        if let Op::MatMul { tiling, .. } = &st.op {
            let w = (tiling.output_tiles * tiling.reduction_tiles) as u64 * a as u64;
            let b = tiling.output_tiles as u64;
            if next + w + b > arch.dram0_depth as u64 {
                return Err(capacity(Region::Dram0, &st.label, next + w + b, arch.dram0_depth as u64));
            }
            weight_base[i] = Some((next as u32, (next + w) as u32));
            allocations.push(whole(format!("{}.weights", tiling.layer), next, w));
            allocations.push(whole(format!("{}.bias", tiling.layer), next + w, b));
            next += w + b;
        }
    }
    let mut helper_base = Vec::with_capacity(s.helpers.len());
    for h in 0..s.helpers.len() {
        if next + a as u64 > arch.dram0_depth as u64 {
            return Err(capacity(Region::Dram0, "helper tiles", next + a as u64, arch.dram0_depth as u64));
        }
        helper_base.push(next as u32);
        allocations.push(whole(format!("helper.{h}"), next, a as u64));
        next += a as u64;
    }
    let dram0_peak = next as u32;

    // Activations: first fit by address, freeing after the last reader.
    let last_use = s.last_use();
    let mut buffer_base = vec![0u32; s.buffers.len()];
    let mut live: Vec<(u64, u64, usize)> = Vec::new();
    let mut dram1_peak = 0u64;
    let mut first_fit = |live: &mut Vec<(u64, u64, usize)>, buf: usize, label: &str| -> Result<u32, CompileError> {
        let extent = s.buffers[buf].vectors as u64;
        live.sort_unstable();
        let mut base = 0u64;
        for &(b, e, _) in live.iter() {
            if b >= base + extent {
                break;
            }
            base = base.max(b + e);
        }
        if base + extent > arch.dram1_depth as u64 {
            return Err(capacity(Region::Dram1, label, base + extent, arch.dram1_depth as u64));
        }
        live.push((base, extent, buf));
        dram1_peak = dram1_peak.max(base + extent);
        Ok(base as u32)
    };
    buffer_base[s.input] = first_fit(&mut live, s.input, first_label)?;
    for (i, st) in s.steps.iter().enumerate() {
        buffer_base[st.out] = first_fit(&mut live, st.out, &st.label)?;
        live.retain(|&(_, _, b)| b == s.output || last_use[b] != Some(i));
    }
    let mut def_step = vec![0usize; s.buffers.len()];
    for (i, st) in s.steps.iter().enumerate() {
        def_step[st.out] = i;
    }
    for (id, buf) in s.buffers.iter().enumerate() {
        let last = if id == s.output { n_steps.saturating_sub(1) } else { last_use[id].unwrap_or(def_step[id]) };
        allocations.push(Allocation {
            region: Region::Dram1,
            label: buf.name.clone(),
            base: buffer_base[id],
            extent: buf.vectors as u32,
            first_step: def_step[id],
            last_step: last,
        });
    }

    let acc_peak = steps.iter().map(|p| p.acc_extent).max().unwrap_or(0);
    Ok(MemoryPlan {
        allocations,
        steps,
        stage_rows,
        peaks: [dram0_peak, dram1_peak as u32, 2 + 3 * stage_rows, acc_peak],
        buffer_base,
        weight_base,
        helper_base,
    })
}
