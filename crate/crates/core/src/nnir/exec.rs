//! Reference executors: double precision and fixed point.
//!
//! Both walk the layer list in order with plain nested loops. The fixed-point
//! executor defines the bit-exact semantics every compiled program must
//! reproduce: products accumulate in reduction order (kernel tap, then input
//! channel), the bias is added at accumulator scale, and the sum is rescaled
//! with half-even rounding.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{conv_out_dim, GraphError, LayerKind, ModelGraph, Padding, TensorShape, INPUT_NAME};
use crate::quant::{FixedPointFormat, QTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: TensorShape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: TensorShape, data: Vec<f64>) -> Result<Self, GraphError> {
        if data.len() != shape.elements() {
            return Err(GraphError::Shape {
                layer: INPUT_NAME.into(),
                message: format!("{} values for shape {shape}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }
}

/// Input positions visited by each output position of a sliding window,
/// flattened row-major over the kernel; `None` marks zero padding.
struct Window {
    out_positions: usize,
    taps: usize,
    /// `out_positions * taps` entries.
    index: Vec<Option<usize>>,
}

fn window(in_spatial: &[usize], kernel: &[usize], stride: &[usize], padding: Padding) -> Window {
    let d = in_spatial.len();
    let mut out_dims = Vec::with_capacity(d);
    let mut pads = Vec::with_capacity(d);
    for i in 0..d {
        let (o, p) = conv_out_dim(in_spatial[i], kernel[i], stride[i], padding).expect("shape inference checked");
        out_dims.push(o);
        pads.push(p);
    }
    let out_positions: usize = out_dims.iter().product();
    let taps: usize = kernel.iter().product();
    let mut index = Vec::with_capacity(out_positions * taps);
    let mut opos = vec![0usize; d];
    for _ in 0..out_positions {
        let mut tap = vec![0usize; d];
        for _ in 0..taps {
            let mut flat = 0usize;
            let mut inside = true;
            for i in 0..d {
                let p = (opos[i] * stride[i] + tap[i]) as isize - pads[i] as isize;
                if p < 0 || p >= in_spatial[i] as isize {
                    inside = false;
                    break;
                }
                flat = flat * in_spatial[i] + p as usize;
            }
            index.push(inside.then_some(flat));
            bump(&mut tap, kernel);
        }
        bump(&mut opos, &out_dims);
    }
    Window { out_positions, taps, index }
}

fn bump(counter: &mut [usize], limits: &[usize]) {
    for i in (0..counter.len()).rev() {
        counter[i] += 1;
        if counter[i] < limits[i] {
            return;
        }
        counter[i] = 0;
    }
}

fn conv_geometry(kind: &LayerKind, x: &TensorShape) -> Option<(Window, usize)> {
    match kind {
        LayerKind::Conv1D { kernel, stride, padding, filters } => {
            Some((window(x.spatial(), &[*kernel], &[*stride], *padding), *filters))
        }
        LayerKind::Conv2D { kernel, stride, padding, filters } => {
            Some((window(x.spatial(), kernel, stride, *padding), *filters))
        }
        LayerKind::Dense { units } => {
            // One window covering every feature, each a single-channel tap.
            let f = x.elements();
            Some((Window { out_positions: 1, taps: f, index: (0..f).map(Some).collect() }, *units))
        }
        _ => None,
    }
}

/// Channels per window tap; dense taps are single features.
fn channels_for(kind: &LayerKind, x: &TensorShape) -> usize {
    if matches!(kind, LayerKind::Dense { .. }) {
        1
    } else {
        x.channels()
    }
}

/// Double-precision forward pass.
pub fn execute_float(g: &ModelGraph, input: &Tensor) -> Result<Tensor, GraphError> {
    execute_float_counted(g, input).map(|(t, _)| t)
}

/// Forward pass that also counts every multiplication performed by
/// convolution and dense layers, padding taps included.
pub fn execute_float_counted(g: &ModelGraph, input: &Tensor) -> Result<(Tensor, u64), GraphError> {
    if &input.shape != g.input_shape() {
        return Err(GraphError::InputShape { got: input.shape.clone(), want: g.input_shape().clone() });
    }
    let mut values: HashMap<&str, Tensor> = HashMap::new();
    values.insert(INPUT_NAME, input.clone());
    let mut multiplies = 0u64;
    for l in g.layers() {
        let x = &values[l.inputs[0].as_str()];
        let out_shape = g.shape_of(&l.name).unwrap().clone();
        let data = match &l.kind {
            LayerKind::Conv1D { .. } | LayerKind::Conv2D { .. } | LayerKind::Dense { .. } => {
                let w = &g.weights()[&l.name];
                let (win, filters) = conv_geometry(&l.kind, &x.shape).unwrap();
                let c = channels_for(&l.kind, &x.shape);
                let mut out = vec![0.0; win.out_positions * filters];
                for o in 0..win.out_positions {
                    for f in 0..filters {
                        let mut s = 0.0;
                        for t in 0..win.taps {
                            let src = win.index[o * win.taps + t];
                            for ch in 0..c {
                                let xv = src.map_or(0.0, |p| x.data[p * c + ch]);
                                s += xv * w.kernel[(t * c + ch) * filters + f];
                                multiplies += 1;
                            }
                        }
                        out[o * filters + f] = s + w.bias[f];
                    }
                }
                out
            }
            LayerKind::MaxPool1D { pool, stride } => max_pool(&x.shape, &x.data, &[*pool], &[*stride], f64::max),
            LayerKind::MaxPool2D { pool, stride } => max_pool(&x.shape, &x.data, pool, stride, f64::max),
            LayerKind::ReLU => x.data.iter().map(|&v| v.max(0.0)).collect(),
            LayerKind::Add => {
                let y = &values[l.inputs[1].as_str()];
                x.data.iter().zip(&y.data).map(|(a, b)| a + b).collect()
            }
            LayerKind::Flatten | LayerKind::Reshape { .. } => x.data.clone(),
            LayerKind::GlobalAvgPool => {
                let c = x.shape.channels();
                let p = x.shape.positions();
                (0..c).map(|ch| (0..p).map(|i| x.data[i * c + ch]).sum::<f64>() / p as f64).collect()
            }
        };
        values.insert(l.name.as_str(), Tensor { shape: out_shape, data });
    }
    Ok((values.remove(g.output()).unwrap(), multiplies))
}

fn max_pool<T: Copy>(
    shape: &TensorShape,
    data: &[T],
    pool: &[usize],
    stride: &[usize],
    max: impl Fn(T, T) -> T,
) -> Vec<T> {
    let win = window(shape.spatial(), pool, stride, Padding::Valid);
    let c = shape.channels();
    let mut out = Vec::with_capacity(win.out_positions * c);
    for o in 0..win.out_positions {
        for ch in 0..c {
            let mut it = win.index[o * win.taps..(o + 1) * win.taps].iter().map(|p| data[p.unwrap() * c + ch]);
            let first = it.next().unwrap();
            out.push(it.fold(first, &max));
        }
    }
    out
}

struct RawTensor {
    shape: TensorShape,
    raw: Vec<i32>,
}

/// Quantize a real-valued input in the given format.
pub fn quantize_input(input: &Tensor, format: FixedPointFormat) -> QTensor {
    QTensor::quantize(input.shape.clone(), &input.data, format).expect("length checked by Tensor")
}

/// Fixed-point forward pass in the format of `input`.
pub fn execute_quant(g: &ModelGraph, input: &QTensor) -> Result<QTensor, GraphError> {
    if input.shape() != g.input_shape() {
        return Err(GraphError::InputShape { got: input.shape().clone(), want: g.input_shape().clone() });
    }
    let fmt = input.format();
    let mut values: HashMap<&str, RawTensor> = HashMap::new();
    values.insert(INPUT_NAME, RawTensor { shape: input.shape().clone(), raw: input.raw().to_vec() });
    for l in g.layers() {
        let x = &values[l.inputs[0].as_str()];
        let out_shape = g.shape_of(&l.name).unwrap().clone();
        let raw = match &l.kind {
            LayerKind::Conv1D { .. } | LayerKind::Conv2D { .. } | LayerKind::Dense { .. } => {
                let w = &g.weights()[&l.name];
                let kernel: Vec<i32> = w.kernel.iter().map(|&v| fmt.quantize(v)).collect();
                let bias: Vec<i32> = w.bias.iter().map(|&v| fmt.quantize(v)).collect();
                let (win, filters) = conv_geometry(&l.kind, &x.shape).unwrap();
                let c = channels_for(&l.kind, &x.shape);
                let mut out = vec![0; win.out_positions * filters];
                for o in 0..win.out_positions {
                    for f in 0..filters {
                        let mut acc = 0i64;
                        for t in 0..win.taps {
                            let Some(p) = win.index[o * win.taps + t] else { continue };
                            for ch in 0..c {
                                acc = fmt.mac_acc(acc, x.raw[p * c + ch], kernel[(t * c + ch) * filters + f]);
                            }
                        }
                        acc = fmt.add_acc(acc, fmt.widen(bias[f]));
                        out[o * filters + f] = fmt.rescale(acc);
                    }
                }
                out
            }
            LayerKind::MaxPool1D { pool, stride } => max_pool(&x.shape, &x.raw, &[*pool], &[*stride], i32::max),
            LayerKind::MaxPool2D { pool, stride } => max_pool(&x.shape, &x.raw, pool, stride, i32::max),
            LayerKind::ReLU => x.raw.iter().map(|&v| v.max(0)).collect(),
            LayerKind::Add => {
                let y = &values[l.inputs[1].as_str()];
                x.raw.iter().zip(&y.raw).map(|(&a, &b)| fmt.saturate_storage(a as i64 + b as i64)).collect()
            }
            LayerKind::Flatten | LayerKind::Reshape { .. } => x.raw.clone(),
            LayerKind::GlobalAvgPool => {
                let c = x.shape.channels();
                let p = x.shape.positions();
                let scale = fmt.quantize(1.0 / p as f64);
                (0..c)
                    .map(|ch| fmt.rescale((0..p).fold(0i64, |acc, i| fmt.mac_acc(acc, x.raw[i * c + ch], scale))))
                    .collect()
            }
        };
        values.insert(l.name.as_str(), RawTensor { shape: out_shape, raw });
    }
    let out = values.remove(g.output()).unwrap();
    Ok(QTensor::new(out.shape, out.raw, fmt).expect("values saturated to storage range"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnir::{LayerSpec, LayerWeights, WeightStore};

    fn shape(d: &[usize]) -> TensorShape {
        TensorShape::new(d.to_vec()).unwrap()
    }

    #[test]
    fn identity_dense() {
        let n = 6;
        let mut kernel = vec![0.0; n * n];
        for i in 0..n {
            kernel[i * n + i] = 1.0;
        }
        let mut w = WeightStore::new();
        w.insert("d".into(), LayerWeights { kernel, bias: vec![0.0; n] });
        let g = ModelGraph::new(
            "id",
            shape(&[n]),
            vec![LayerSpec::new("d", LayerKind::Dense { units: n }, &[INPUT_NAME])],
            w,
            "d",
        )
        .unwrap();
        let x = Tensor::new(shape(&[n]), vec![0.5, -1.0, 2.0, 3.25, 0.0, -7.5]).unwrap();
        let (y, muls) = execute_float_counted(&g, &x).unwrap();
        assert_eq!(y.data, x.data);
        assert_eq!(muls, 36);
        let q = execute_quant(&g, &quantize_input(&x, FixedPointFormat::default())).unwrap();
        assert_eq!(q.dequantize(), x.data);
    }

    #[test]
    fn relu_definition() {
        let g = ModelGraph::new(
            "r",
            shape(&[3]),
            vec![LayerSpec::new("r", LayerKind::ReLU, &[INPUT_NAME])],
            WeightStore::new(),
            "r",
        )
        .unwrap();
        let y = execute_float(&g, &Tensor::new(shape(&[3]), vec![-1.0, 0.0, 2.5]).unwrap()).unwrap();
        assert_eq!(y.data, vec![0.0, 0.0, 2.5]);
    }

    #[test]
    fn pooling_and_gap() {
        let layers = vec![
            LayerSpec::new("p", LayerKind::MaxPool1D { pool: 2, stride: 2 }, &[INPUT_NAME]),
            LayerSpec::new("g", LayerKind::GlobalAvgPool, &["p"]),
        ];
        let g = ModelGraph::new("p", shape(&[5, 2]), layers, WeightStore::new(), "g").unwrap();
        // channel 0: 1 3 2 5 9 -> pools 3, 5 -> mean 4; channel 1: -1 -2 -3 -4 0 -> -1, -3 -> -2
        let x = Tensor::new(shape(&[5, 2]), vec![1.0, -1.0, 3.0, -2.0, 2.0, -3.0, 5.0, -4.0, 9.0, 0.0]).unwrap();
        assert_eq!(execute_float(&g, &x).unwrap().data, vec![4.0, -2.0]);
    }

    #[test]
    fn wrong_input_shape() {
        let g = ModelGraph::new(
            "r",
            shape(&[3]),
            vec![LayerSpec::new("r", LayerKind::ReLU, &[INPUT_NAME])],
            WeightStore::new(),
            "r",
        )
        .unwrap();
        let x = Tensor::new(shape(&[4]), vec![0.0; 4]).unwrap();
        assert!(matches!(execute_float(&g, &x), Err(GraphError::InputShape { .. })));
    }
}
