use serde::{Deserialize, Serialize};

use super::CompileError;
use crate::arch::{validate_arch, ArchConfig, InvalidArch};
use crate::nnir::{LayerKind, ModelGraph};

/// Matrix-product view of one parameterized layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTiling {
    pub layer: String,
    /// Rows of the product: output positions (1 for dense layers).
    pub m: usize,
    /// Reduction length: kernel taps times input channels.
    pub k: usize,
    /// Output channels.
    pub n: usize,
    pub reduction_tiles: usize,
    pub output_tiles: usize,
    /// Whether the input must be rearranged into a patch matrix first.
    pub im2col: bool,
}

impl LayerTiling {
    /// Tiles as `(output tile, reduction tile)` in traversal order.
    pub fn tiles(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.output_tiles).flat_map(move |n| (0..self.reduction_tiles).map(move |t| (n, t)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingPlan {
    pub array_size: usize,
    pub layers: Vec<LayerTiling>,
}

impl TilingPlan {
    pub fn layer(&self, name: &str) -> Option<&LayerTiling> {
        self.layers.iter().find(|l| l.layer == name)
    }
}

pub(crate) fn check_arch(arch: &ArchConfig) -> Result<(), CompileError> {
    let v = validate_arch(arch);
    if v.is_empty() {
        Ok(())
    } else {
        Err(InvalidArch(v).into())
    }
}

/// Split every conv and dense layer into `array_size × array_size` tiles.
pub fn plan_tiling(g: &ModelGraph, arch: &ArchConfig) -> Result<TilingPlan, CompileError> {
    check_arch(arch)?;
    let a = arch.array_size as usize;
    let mut layers = Vec::new();
    for l in g.layers() {
        let x = g.shape_of(&l.inputs[0]).unwrap();
        let y = g.shape_of(&l.name).unwrap();
        let (taps, im2col) = match &l.kind {
            LayerKind::Conv1D { kernel, stride, .. } => (*kernel, *kernel != 1 || *stride != 1),
            LayerKind::Conv2D { kernel, stride, .. } => (kernel[0] * kernel[1], kernel != &[1, 1] || stride != &[1, 1]),
            LayerKind::Dense { .. } => (x.elements(), false),
            _ => continue,
        };
        let (m, k) = match l.kind {
            LayerKind::Dense { .. } => (1, taps),
            _ => (y.positions(), taps * x.channels()),
        };
        let n = y.channels();
        layers.push(LayerTiling {
            layer: l.name.clone(),
            m,
            k,
            n,
            reduction_tiles: k.div_ceil(a),
            output_tiles: n.div_ceil(a),
            im2col,
        });
    }
    Ok(TilingPlan { array_size: a, layers })
}
