//! Graph to step list: operator fusion, buffer creation, and the index maps
//! that drive gathers (im2col, flatten, reshape) and pooling.

use std::collections::HashMap;

use super::tiling::LayerTiling;
use super::{layout_dims, layout_vectors, vector_slot, CompileError, TilingPlan};
use crate::nnir::{conv_out_dim, LayerKind, ModelGraph, Padding, TensorShape, INPUT_NAME};
use crate::quant::FixedPointFormat;

pub(crate) type BufId = usize;

#[derive(Debug, Clone)]
pub(crate) struct Buffer {
    pub name: String,
    pub vectors: usize,
}

/// Helper weight tiles shared across layers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) enum HelperTile {
    /// Routes `src_lane -> dst_lane` for each pair with weight one.
    Select(Vec<(u32, u32)>),
    /// Diagonal of `quantize(1 / positions)`.
    Diag(usize),
}

/// A vector-level gather: each entry moves the lanes given by `pattern`
/// from source vector `src` into destination vector `dst`.
#[derive(Debug, Clone)]
pub(crate) struct GatherMap {
    pub dst_vectors: usize,
    /// `(dst, src, helper index)`, sorted.
    pub pairs: Vec<(u32, u32, usize)>,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    MatMul { x: BufId, tiling: LayerTiling, relu: bool },
    Gather { src: BufId, map: GatherMap },
    MaxPool { src: BufId, chunks: usize, p_in: usize, p_out: usize, taps: usize, windows: Vec<usize> },
    Gap { src: BufId, chunks: usize, positions: usize, diag: usize },
    Add { a: BufId, b: BufId, relu: bool },
    Relu { src: BufId },
}

#[derive(Debug, Clone)]
pub(crate) struct Step {
    /// Layer name, or `producer+relu` for a fused pair.
    pub label: String,
    pub op: Op,
    pub out: BufId,
}

impl Step {
    pub fn reads(&self) -> Vec<BufId> {
        match &self.op {
            Op::MatMul { x, .. } => vec![*x],
            Op::Gather { src, .. } | Op::MaxPool { src, .. } | Op::Gap { src, .. } | Op::Relu { src } => vec![*src],
            Op::Add { a, b, .. } => vec![*a, *b],
        }
    }

    /// Accumulator rows and local staging rows the step would like to
    /// process at once.
    pub fn rows(&self, buffers: &[Buffer]) -> usize {
        match &self.op {
            Op::MatMul { tiling, .. } => tiling.m,
            Op::Gather { map, .. } => map.dst_vectors,
            Op::MaxPool { p_out, .. } => *p_out,
            Op::Gap { positions, .. } => *positions,
            Op::Add { a, .. } => buffers[*a].vectors,
            Op::Relu { src } => buffers[*src].vectors,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Schedule {
    pub buffers: Vec<Buffer>,
    pub steps: Vec<Step>,
    pub helpers: Vec<HelperTile>,
    pub input: BufId,
    pub output: BufId,
}

impl Schedule {
    /// Index of the last step reading each buffer.
    pub fn last_use(&self) -> Vec<Option<usize>> {
        let mut last = vec![None; self.buffers.len()];
        for (i, s) in self.steps.iter().enumerate() {
            for b in s.reads() {
                last[b] = Some(i);
            }
        }
        last
    }
}

/// Flat input position visited by each (output position, tap), row-major;
/// `None` marks zero padding.
fn sliding_window(
    spatial: &[usize],
    kernel: &[usize],
    stride: &[usize],
    padding: Padding,
) -> (usize, usize, Vec<Option<usize>>) {
    let geo: Vec<(usize, usize)> = (0..spatial.len())
        .map(|d| conv_out_dim(spatial[d], kernel[d], stride[d], padding).expect("shapes inferred"))
        .collect();
    let (out1, pad1, k1, s1, n1) =
        if spatial.len() == 2 { (geo[1].0, geo[1].1, kernel[1], stride[1], spatial[1]) } else { (1, 0, 1, 1, 1) };
    let (out0, pad0, k0, s0, n0) = (geo[0].0, geo[0].1, kernel[0], stride[0], spatial[0]);
    let mut idx = Vec::with_capacity(out0 * out1 * k0 * k1);
    for o0 in 0..out0 {
        for o1 in 0..out1 {
            for t0 in 0..k0 {
                for t1 in 0..k1 {
                    let i0 = (o0 * s0 + t0) as isize - pad0 as isize;
                    let i1 = (o1 * s1 + t1) as isize - pad1 as isize;
                    let inside = i0 >= 0 && i1 >= 0 && (i0 as usize) < n0 && (i1 as usize) < n1;
                    idx.push(inside.then(|| i0 as usize * n1 + i1 as usize));
                }
            }
        }
    }
    (out0 * out1, k0 * k1, idx)
}

struct Builder<'a> {
    a: usize,
    fmt: FixedPointFormat,
    g: &'a ModelGraph,
    sched: Schedule,
    helper_index: HashMap<HelperTile, usize>,
}

impl Builder<'_> {
    fn buffer(&mut self, name: &str, shape: &TensorShape) -> BufId {
        self.sched.buffers.push(Buffer { name: name.to_string(), vectors: layout_vectors(shape, self.a) });
        self.sched.buffers.len() - 1
    }

    fn helper(&mut self, tile: HelperTile) -> usize {
        if let Some(&i) = self.helper_index.get(&tile) {
            return i;
        }
        self.sched.helpers.push(tile.clone());
        self.helper_index.insert(tile, self.sched.helpers.len() - 1);
        self.sched.helpers.len() - 1
    }

    /// Build a gather from an element map `dst element -> src element`,
    /// both given as `(position, channel)` in their own layouts.
    fn gather(
        &mut self,
        layer: &str,
        dst_dims: (usize, usize),
        src_positions: usize,
        map: impl Iterator<Item = ((usize, usize), (usize, usize))>,
    ) -> Result<GatherMap, CompileError> {
        if self.fmt.one_raw().is_none() {
            return Err(CompileError::Unsupported {
                layer: layer.to_string(),
                reason: format!(
                    "data rearrangement needs 1.0 representable; frac_bits must be at most {}",
                    self.fmt.total_bits() - 2
                ),
            });
        }
        let a = self.a;
        let mut lanes: HashMap<(u32, u32), Vec<(u32, u32)>> = HashMap::new();
        for ((dp, dc), (sp, sc)) in map {
            let (dv, dl) = vector_slot(dp, dc, dst_dims.0, a);
            let (sv, sl) = vector_slot(sp, sc, src_positions, a);
            lanes.entry((dv as u32, sv as u32)).or_default().push((sl as u32, dl as u32));
        }
        let mut keys: Vec<(u32, u32)> = lanes.keys().copied().collect();
        keys.sort_unstable();
        let mut pairs = Vec::with_capacity(keys.len());
        for key in keys {
            let mut pat = lanes.remove(&key).unwrap();
            pat.sort_unstable();
            let h = self.helper(HelperTile::Select(pat));
            pairs.push((key.0, key.1, h));
        }
        Ok(GatherMap { dst_vectors: dst_dims.1.div_ceil(a) * dst_dims.0, pairs })
    }

    fn push(&mut self, label: String, op: Op, out: BufId) {
        self.sched.steps.push(Step { label, op, out });
    }
}

pub(crate) fn build_schedule(
    g: &ModelGraph,
    plan: &TilingPlan,
    fmt: FixedPointFormat,
) -> Result<Schedule, CompileError> {
    let a = plan.array_size;
    let mut consumers: HashMap<&str, Vec<&str>> = HashMap::new();
    for l in g.layers() {
        for i in &l.inputs {
            consumers.entry(i.as_str()).or_default().push(l.name.as_str());
        }
    }
    let mut b = Builder {
        a,
        fmt,
        g,
        sched: Schedule { buffers: vec![], steps: vec![], helpers: vec![], input: 0, output: 0 },
        helper_index: HashMap::new(),
    };
    let mut tensors: HashMap<String, BufId> = HashMap::new();
    tensors.insert(INPUT_NAME.to_string(), b.buffer(INPUT_NAME, g.input_shape()));
    let mut fused: Vec<&str> = Vec::new();

    for l in g.layers() {
        if fused.contains(&l.name.as_str()) {
            continue;
        }
        // A ReLU that is the only consumer of a conv/dense/add result is
        // applied in the accumulator before the result leaves the array.
        let fuse = match l.kind {
            LayerKind::Conv1D { .. } | LayerKind::Conv2D { .. } | LayerKind::Dense { .. } | LayerKind::Add
                if l.name != g.output() =>
            {
                match consumers.get(l.name.as_str()).map(Vec::as_slice) {
                    Some([only]) if g.layer(only).is_some_and(|c| c.kind == LayerKind::ReLU) => Some(*only),
                    _ => None,
                }
            }
            _ => None,
        };
        let (out_name, label) = match fuse {
            Some(r) => {
                fused.push(r);
                (r, format!("{}+{r}", l.name))
            }
            None => (l.name.as_str(), l.name.clone()),
        };
        let x_shape = b.g.shape_of(&l.inputs[0]).unwrap().clone();
        let y_shape = b.g.shape_of(out_name).unwrap().clone();
        let x = tensors[&l.inputs[0]];
        let out = b.buffer(out_name, &y_shape);
        tensors.insert(out_name.to_string(), out);

        match &l.kind {
            LayerKind::Conv1D { .. } | LayerKind::Conv2D { .. } | LayerKind::Dense { .. } => {
                let tiling = plan.layer(&l.name).expect("tiling covers every parameterized layer").clone();
                let mut src = x;
                if tiling.im2col {
                    let (kernel, stride, padding) = match &l.kind {
                        LayerKind::Conv1D { kernel, stride, padding, .. } => (vec![*kernel], vec![*stride], *padding),
                        LayerKind::Conv2D { kernel, stride, padding, .. } => {
                            (kernel.to_vec(), stride.to_vec(), *padding)
                        }
                        _ => unreachable!(),
                    };
                    let (m, taps, win) = sliding_window(x_shape.spatial(), &kernel, &stride, padding);
                    let c_in = x_shape.channels();
                    let p_in = x_shape.positions();
                    let cols = TensorShape::new(vec![m, taps * c_in]).unwrap();
                    let tmp = b.buffer(&format!("{}.im2col", l.name), &cols);
                    let elems = (0..m).flat_map(|o| {
                        let win = &win;
                        (0..taps).filter_map(move |t| win[o * taps + t].map(|p| (o, t, p)))
                    });
                    let map = b.gather(
                        &l.name,
                        (m, taps * c_in),
                        p_in,
                        elems.flat_map(|(o, t, p)| (0..c_in).map(move |c| ((o, t * c_in + c), (p, c)))),
                    )?;
                    b.push(l.name.clone(), Op::Gather { src: x, map }, tmp);
                    src = tmp;
                }
                b.push(label, Op::MatMul { x: src, tiling, relu: fuse.is_some() }, out);
            }
            LayerKind::MaxPool1D { .. } | LayerKind::MaxPool2D { .. } => {
                let (pool, stride) = match &l.kind {
                    LayerKind::MaxPool1D { pool, stride } => (vec![*pool], vec![*stride]),
                    LayerKind::MaxPool2D { pool, stride } => (pool.to_vec(), stride.to_vec()),
                    _ => unreachable!(),
                };
                let (p_out, taps, win) = sliding_window(x_shape.spatial(), &pool, &stride, Padding::Valid);
                let windows = win.into_iter().map(|p| p.expect("valid pooling has no padding")).collect();
                let op = Op::MaxPool {
                    src: x,
                    chunks: x_shape.channels().div_ceil(a),
                    p_in: x_shape.positions(),
                    p_out,
                    taps,
                    windows,
                };
                b.push(label, op, out);
            }
            LayerKind::GlobalAvgPool => {
                let positions = x_shape.positions();
                let diag = b.helper(HelperTile::Diag(positions));
                b.push(label, Op::Gap { src: x, chunks: x_shape.channels().div_ceil(a), positions, diag }, out);
            }
            LayerKind::Add => {
                let y = tensors[&l.inputs[1]];
                b.push(label, Op::Add { a: x, b: y, relu: fuse.is_some() }, out);
            }
            LayerKind::ReLU => b.push(label, Op::Relu { src: x }, out),
            LayerKind::Flatten | LayerKind::Reshape { .. } => {
                let (sp, sc) = layout_dims(&x_shape);
                let (dp, dc) = layout_dims(&y_shape);
                let map =
                    b.gather(&l.name, (dp, dc), sp, (0..dp * dc).map(|e| ((e / dc, e % dc), (e / sc, e % sc))))?;
                b.push(label, Op::Gather { src: x, map }, out);
            }
        }
    }
    b.sched.output = tensors[g.output()];
    Ok(b.sched)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_same_padding() {
        // len 5, k3, s1, same: pad 1 before.
        let (m, taps, w) = sliding_window(&[5], &[3], &[1], Padding::Same);
        assert_eq!((m, taps), (5, 3));
        assert_eq!(&w[..3], &[None, Some(0), Some(1)]);
        assert_eq!(&w[12..], &[Some(3), Some(4), None]);
    }

    #[test]
    fn window_2d_strided() {
        let (m, taps, w) = sliding_window(&[4, 4], &[2, 2], &[2, 2], Padding::Valid);
        assert_eq!((m, taps), (4, 4));
        // output (1, 1) covers input rows 2..4, cols 2..4.
        assert_eq!(&w[12..], &[Some(10), Some(11), Some(14), Some(15)]);
    }
}
