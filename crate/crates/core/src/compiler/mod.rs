//! Lowering of layer graphs to TCU programs.
//!
//! Every parameterized layer becomes a matrix product `Y[M, N] = X[M, K] · W[K, N]`
//! streamed through the systolic array one `A × A` weight tile at a time
//! (`A` = array size). Convolutions first materialize their patch matrix
//! (im2col) in DRAM; that rearrangement, like flatten and reshape, is itself
//! executed on the array as products with 0/1 selection tiles, so the whole
//! program stays inside the instruction set.
//!
//! Activations use a channel-chunk-major layout: element `(p, c)` of a
//! tensor with `P` positions lives in lane `c % A` of vector
//! `(c / A) * P + p`. A rank-1 tensor has one position. A matrix `[M, K]`
//! is the tensor with `M` positions and `K` channels.

mod alloc;
mod bundle;
pub mod isa;
mod lower;
mod schedule;
mod tiling;
mod verify;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchConfig, InvalidArch};
use crate::nnir::{GraphError, TensorShape};
use crate::quant::FormatError;

pub use alloc::{allocate, Allocation, MemoryPlan, StepPlan};
pub use bundle::{
    emit, load_bundle, read_bundle_dir, write_bundle_dir, ArtifactBundle, BundleError, BundleManifest, BUNDLE_FORMAT,
};
pub use isa::{Direction, InstrClass, Region, SimdOp, TcuInstruction};
pub use lower::lower;
pub use tiling::{plan_tiling, LayerTiling, TilingPlan};
pub use verify::{replay, ReplayError, ReplayReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompileError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Arch(#[from] InvalidArch),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("layer `{layer}` is not supported: {reason}")]
    Unsupported { layer: String, reason: String },
    #[error("{region} capacity exceeded at layer `{layer}`: need {need}, have {have} (short by {})", need - have)]
    Capacity { region: Region, layer: String, need: u64, have: u64 },
}

/// Where a tensor lives in DRAM.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoBinding {
    pub region: Region,
    pub base: u32,
    /// Extent in vectors.
    pub extent: u32,
    pub shape: TensorShape,
}

/// Instruction range `[start, end)` emitted for one layer (or fused group).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpan {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

/// A lowered program plus everything the simulator needs to run it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcuProgram {
    pub model_name: String,
    pub arch: ArchConfig,
    pub instructions: Vec<TcuInstruction>,
    /// Initial contents of dram0, `array_size` raw values per vector.
    pub constants: Vec<i32>,
    pub input: IoBinding,
    pub output: IoBinding,
    /// MAC count of the source graph.
    pub graph_macs: u64,
    pub spans: Vec<LayerSpan>,
}

/// `(positions, channels)` of a tensor in the chunk-major layout.
pub fn layout_dims(shape: &TensorShape) -> (usize, usize) {
    if shape.rank() == 1 {
        (1, shape.elements())
    } else {
        (shape.positions(), shape.channels())
    }
}

/// Number of `array_size`-lane vectors a tensor occupies.
pub fn layout_vectors(shape: &TensorShape, array_size: usize) -> usize {
    let (p, c) = layout_dims(shape);
    c.div_ceil(array_size) * p
}

/// Vector index and lane of element `(p, c)`.
pub(crate) fn vector_slot(p: usize, c: usize, positions: usize, array_size: usize) -> (usize, usize) {
    ((c / array_size) * positions + p, c % array_size)
}

/// Pack a row-major tensor into the chunk-major vector layout (flat, zero
/// filled lanes).
pub fn pack_tensor(shape: &TensorShape, raw: &[i32], array_size: usize) -> Vec<i32> {
    let (p_n, c_n) = layout_dims(shape);
    let mut out = vec![0; layout_vectors(shape, array_size) * array_size];
    for p in 0..p_n {
        for c in 0..c_n {
            let (v, l) = vector_slot(p, c, p_n, array_size);
            out[v * array_size + l] = raw[p * c_n + c];
        }
    }
    out
}

/// Inverse of [`pack_tensor`].
pub fn unpack_tensor(shape: &TensorShape, packed: &[i32], array_size: usize) -> Vec<i32> {
    let (p_n, c_n) = layout_dims(shape);
    let mut out = Vec::with_capacity(p_n * c_n);
    for p in 0..p_n {
        for c in 0..c_n {
            let (v, l) = vector_slot(p, c, p_n, array_size);
            out.push(packed[v * array_size + l]);
        }
    }
    out
}
