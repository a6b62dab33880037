//! Layer-graph IR: shapes, layers, weights, and validation.
//!
//! Tensors are row-major with the channel dimension last: `[features]` for
//! vectors, `[len, channels]` for 1-D signals, `[h, w, channels]` for 2-D
//! maps. Kernels are stored `[k, in, out]` (1-D), `[kh, kw, in, out]` (2-D)
//! and `[in, units]` (dense).

mod cost;
pub mod demo;
mod exec;
pub mod gen;
mod io;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cost::{count_macs, CostReport, LayerCost};
pub use exec::{execute_float, execute_float_counted, execute_quant, quantize_input, Tensor};
pub use io::{load_model, parse_model, render_manifest, save_model, ModelFileError};

/// Name under which layers refer to the graph input.
pub const INPUT_NAME: &str = "input";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("invalid shape {0:?}: rank must be 1..=3 with every dim >= 1")]
    BadShape(Vec<usize>),
    #[error("duplicate layer name `{0}`")]
    DuplicateName(String),
    #[error("layer `{layer}`: unknown input `{input}`")]
    UnknownInput { layer: String, input: String },
    #[error("layer `{layer}`: expected {want} input(s), got {got}")]
    Arity { layer: String, want: usize, got: usize },
    #[error("layer `{layer}`: {message}")]
    Shape { layer: String, message: String },
    #[error("layer `{layer}`: {message}")]
    Attribute { layer: String, message: String },
    #[error("layer `{layer}`: weights {message}")]
    Weights { layer: String, message: String },
    #[error("unexpected weights for layer `{0}`")]
    StrayWeights(String),
    #[error("output layer `{0}` does not exist")]
    UnknownOutput(String),
    #[error("layer `{0}` is never consumed and is not the output")]
    Dangling(String),
    #[error("graph has no layers")]
    Empty,
    #[error("input tensor has shape {got}, expected {want}")]
    InputShape { got: TensorShape, want: TensorShape },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape(Vec<usize>);

impl TensorShape {
    pub fn new(dims: Vec<usize>) -> Result<Self, GraphError> {
        if dims.is_empty() || dims.len() > 3 || dims.contains(&0) {
            return Err(GraphError::BadShape(dims));
        }
        Ok(Self(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn elements(&self) -> usize {
        self.0.iter().product()
    }

    /// Size of the trailing (channel) dimension.
    pub fn channels(&self) -> usize {
        *self.0.last().unwrap()
    }

    /// Number of positions, i.e. elements per channel.
    pub fn positions(&self) -> usize {
        self.elements() / self.channels()
    }

    /// Spatial dims for rank-2/3 tensors.
    pub fn spatial(&self) -> &[usize] {
        &self.0[..self.0.len() - 1]
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Padding {
    Valid,
    Same,
}

impl Padding {
    pub fn as_str(self) -> &'static str {
        match self {
            Padding::Valid => "valid",
            Padding::Same => "same",
        }
    }
}

/// Output length and leading pad for one spatial dimension.
///
/// `same` pads with `max((out-1)*stride + k - len, 0)` zeros split so the
/// extra one (if odd) goes after the data.
pub fn conv_out_dim(len: usize, k: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Valid => (k <= len).then(|| ((len - k) / stride + 1, 0)),
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(len);
            Some((out, total / 2))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv1D { kernel: usize, stride: usize, padding: Padding, filters: usize },
    Conv2D { kernel: [usize; 2], stride: [usize; 2], padding: Padding, filters: usize },
    Dense { units: usize },
    MaxPool1D { pool: usize, stride: usize },
    MaxPool2D { pool: [usize; 2], stride: [usize; 2] },
    ReLU,
    Add,
    Flatten,
    Reshape { target: Vec<usize> },
    GlobalAvgPool,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv1D { .. } => "Conv1D",
            LayerKind::Conv2D { .. } => "Conv2D",
            LayerKind::Dense { .. } => "Dense",
            LayerKind::MaxPool1D { .. } => "MaxPool1D",
            LayerKind::MaxPool2D { .. } => "MaxPool2D",
            LayerKind::ReLU => "ReLU",
            LayerKind::Add => "Add",
            LayerKind::Flatten => "Flatten",
            LayerKind::Reshape { .. } => "Reshape",
            LayerKind::GlobalAvgPool => "GlobalAvgPool",
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerKind::Conv1D { .. } | LayerKind::Conv2D { .. } | LayerKind::Dense { .. })
    }

    pub fn arity(&self) -> usize {
        if matches!(self, LayerKind::Add) {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Self {
        Self { name: name.into(), kind, inputs: inputs.iter().map(|s| s.to_string()).collect() }
    }
}

/// Kernel and bias of one parameterized layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

pub type WeightStore = BTreeMap<String, LayerWeights>;

/// Validated, immutable layer DAG.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    name: String,
    input_shape: TensorShape,
    layers: Vec<LayerSpec>,
    weights: WeightStore,
    output: String,
    shapes: HashMap<String, TensorShape>,
}

impl ModelGraph {
    pub fn new(
        name: impl Into<String>,
        input_shape: TensorShape,
        layers: Vec<LayerSpec>,
        weights: WeightStore,
        output: impl Into<String>,
    ) -> Result<Self, GraphError> {
        let output = output.into();
        if layers.is_empty() {
            return Err(GraphError::Empty);
        }
        let shapes = infer(&input_shape, &layers)?;
        if !shapes.contains_key(&output) || output == INPUT_NAME {
            return Err(GraphError::UnknownOutput(output));
        }
        let consumed: HashSet<&str> = layers.iter().flat_map(|l| l.inputs.iter().map(String::as_str)).collect();
        if let Some(l) = layers.iter().find(|l| l.name != output && !consumed.contains(l.name.as_str())) {
            return Err(GraphError::Dangling(l.name.clone()));
        }
        for l in &layers {
            match (l.kind.is_parameterized(), weights.get(&l.name)) {
                (true, None) => return Err(GraphError::Weights { layer: l.name.clone(), message: "missing".into() }),
                (true, Some(w)) => {
                    let (k, b) = param_shape(&l.kind, &shapes[&l.inputs[0]]);
                    if w.kernel.len() != k || w.bias.len() != b {
                        return Err(GraphError::Weights {
                            layer: l.name.clone(),
                            message: format!(
                                "have kernel {} / bias {} values, expected {k} / {b}",
                                w.kernel.len(),
                                w.bias.len()
                            ),
                        });
                    }
                }
                (false, Some(_)) => return Err(GraphError::StrayWeights(l.name.clone())),
                (false, None) => {}
            }
        }
        if let Some(name) = weights.keys().find(|n| !layers.iter().any(|l| &l.name == *n)) {
            return Err(GraphError::StrayWeights(name.clone()));
        }
        Ok(Self { name: name.into(), input_shape, layers, weights, output, shapes })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &TensorShape {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    pub fn output(&self) -> &str {
        &self.output
    }

    pub fn output_shape(&self) -> &TensorShape {
        &self.shapes[&self.output]
    }

    /// Shape of a layer output, or of the graph input under [`INPUT_NAME`].
    pub fn shape_of(&self, name: &str) -> Option<&TensorShape> {
        self.shapes.get(name)
    }

    /// Same graph with layers in a different (valid) topological order.
    pub fn reordered(&self, order: &[usize]) -> Result<Self, GraphError> {
        let layers = order.iter().map(|&i| self.layers[i].clone()).collect();
        Self::new(self.name.clone(), self.input_shape.clone(), layers, self.weights.clone(), self.output.clone())
    }
}

/// Shape inference over a topologically ordered layer list. The returned
/// map also holds the graph input under [`INPUT_NAME`].
pub fn infer_shapes(g: &ModelGraph) -> HashMap<String, TensorShape> {
    g.shapes.clone()
}

fn infer(input: &TensorShape, layers: &[LayerSpec]) -> Result<HashMap<String, TensorShape>, GraphError> {
    let mut shapes = HashMap::new();
    shapes.insert(INPUT_NAME.to_string(), input.clone());
    for l in layers {
        if shapes.contains_key(&l.name) {
            return Err(GraphError::DuplicateName(l.name.clone()));
        }
        if l.inputs.len() != l.kind.arity() {
            return Err(GraphError::Arity { layer: l.name.clone(), want: l.kind.arity(), got: l.inputs.len() });
        }
        let mut ins = Vec::with_capacity(l.inputs.len());
        for i in &l.inputs {
            let s =
                shapes.get(i).ok_or_else(|| GraphError::UnknownInput { layer: l.name.clone(), input: i.clone() })?;
            ins.push(s.clone());
        }
        let out = layer_output_shape(l, &ins)?;
        shapes.insert(l.name.clone(), out);
    }
    Ok(shapes)
}

fn layer_output_shape(l: &LayerSpec, ins: &[TensorShape]) -> Result<TensorShape, GraphError> {
    let shape_err = |message: String| GraphError::Shape { layer: l.name.clone(), message };
    let attr_err = |message: &str| GraphError::Attribute { layer: l.name.clone(), message: message.to_string() };
    let x = &ins[0];
    let positive = |v: &[usize]| v.iter().all(|&d| d >= 1);
    let dims = match &l.kind {
        LayerKind::Conv1D { kernel, stride, padding, filters } => {
            if !positive(&[*kernel, *stride, *filters]) {
                return Err(attr_err("kernel, stride and filters must be >= 1"));
            }
            if x.rank() != 2 {
                return Err(shape_err(format!("Conv1D needs a [len, channels] input, got {x}")));
            }
            let (len, _) = conv_out_dim(x.dims()[0], *kernel, *stride, *padding)
                .ok_or_else(|| shape_err(format!("kernel {kernel} larger than input length {}", x.dims()[0])))?;
            vec![len, *filters]
        }
        LayerKind::Conv2D { kernel, stride, padding, filters } => {
            if !positive(kernel) || !positive(stride) || *filters == 0 {
                return Err(attr_err("kernel, stride and filters must be >= 1"));
            }
            if x.rank() != 3 {
                return Err(shape_err(format!("Conv2D needs an [h, w, channels] input, got {x}")));
            }
            let mut out = Vec::new();
            for d in 0..2 {
                let (len, _) = conv_out_dim(x.dims()[d], kernel[d], stride[d], *padding)
                    .ok_or_else(|| shape_err(format!("kernel {kernel:?} larger than input {x}")))?;
                out.push(len);
            }
            out.push(*filters);
            out
        }
        LayerKind::Dense { units } => {
            if *units == 0 {
                return Err(attr_err("units must be >= 1"));
            }
            if x.rank() != 1 {
                return Err(shape_err(format!("Dense needs a rank-1 input, got {x}")));
            }
            vec![*units]
        }
        LayerKind::MaxPool1D { pool, stride } => {
            if !positive(&[*pool, *stride]) {
                return Err(attr_err("pool and stride must be >= 1"));
            }
            if x.rank() != 2 {
                return Err(shape_err(format!("MaxPool1D needs a [len, channels] input, got {x}")));
            }
            let (len, _) = conv_out_dim(x.dims()[0], *pool, *stride, Padding::Valid)
                .ok_or_else(|| shape_err(format!("pool {pool} larger than input {x}")))?;
            vec![len, x.channels()]
        }
        LayerKind::MaxPool2D { pool, stride } => {
            if !positive(pool) || !positive(stride) {
                return Err(attr_err("pool and stride must be >= 1"));
            }
            if x.rank() != 3 {
                return Err(shape_err(format!("MaxPool2D needs an [h, w, channels] input, got {x}")));
            }
            let mut out = Vec::new();
            for d in 0..2 {
                let (len, _) = conv_out_dim(x.dims()[d], pool[d], stride[d], Padding::Valid)
                    .ok_or_else(|| shape_err(format!("pool {pool:?} larger than input {x}")))?;
                out.push(len);
            }
            out.push(x.channels());
            out
        }
        LayerKind::ReLU => x.dims().to_vec(),
        LayerKind::Add => {
            if ins[0] != ins[1] {
                return Err(shape_err(format!("Add of unequal shapes {} and {}", ins[0], ins[1])));
            }
            x.dims().to_vec()
        }
        LayerKind::Flatten => vec![x.elements()],
        LayerKind::Reshape { target } => {
            let t = TensorShape::new(target.clone()).map_err(|_| attr_err("reshape target must have rank 1..=3"))?;
            if t.elements() != x.elements() {
                return Err(shape_err(format!("cannot reshape {x} into {t}")));
            }
            target.clone()
        }
        LayerKind::GlobalAvgPool => {
            if x.rank() < 2 {
                return Err(shape_err(format!("GlobalAvgPool needs spatial dims, got {x}")));
            }
            vec![x.channels()]
        }
    };
    TensorShape::new(dims).map_err(|e| shape_err(e.to_string()))
}

/// (kernel elements, bias elements) of a parameterized layer.
pub(crate) fn param_shape(kind: &LayerKind, input: &TensorShape) -> (usize, usize) {
    match kind {
        LayerKind::Conv1D { kernel, filters, .. } => (kernel * input.channels() * filters, *filters),
        LayerKind::Conv2D { kernel, filters, .. } => (kernel[0] * kernel[1] * input.channels() * filters, *filters),
        LayerKind::Dense { units } => (input.elements() * units, *units),
        _ => (0, 0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(d: &[usize]) -> TensorShape {
        TensorShape::new(d.to_vec()).unwrap()
    }

    fn zeros(kind: &LayerKind, input: &TensorShape) -> LayerWeights {
        let (k, b) = param_shape(kind, input);
        LayerWeights { kernel: vec![0.0; k], bias: vec![0.0; b] }
    }

    fn single(input: TensorShape, kind: LayerKind) -> Result<ModelGraph, GraphError> {
        let mut w = WeightStore::new();
        if kind.is_parameterized() {
            w.insert("l".into(), zeros(&kind, &input));
        }
        ModelGraph::new("t", input, vec![LayerSpec::new("l", kind, &[INPUT_NAME])], w, "l")
    }

    #[test]
    fn conv_shapes() {
        let g =
            single(shape(&[187, 1]), LayerKind::Conv1D { kernel: 5, stride: 1, padding: Padding::Valid, filters: 16 })
                .unwrap();
        assert_eq!(g.output_shape().dims(), &[183, 16]);
        let g = single(
            shape(&[10, 10, 1]),
            LayerKind::Conv2D { kernel: [3, 3], stride: [1, 1], padding: Padding::Valid, filters: 8 },
        )
        .unwrap();
        assert_eq!(g.output_shape().dims(), &[8, 8, 8]);
        let g = single(shape(&[183, 16]), LayerKind::Flatten).unwrap();
        assert_eq!(g.output_shape().dims(), &[2928]);
    }

    #[test]
    fn same_padding_shapes() {
        assert_eq!(conv_out_dim(10, 3, 1, Padding::Same), Some((10, 1)));
        assert_eq!(conv_out_dim(10, 3, 2, Padding::Same), Some((5, 0)));
        assert_eq!(conv_out_dim(11, 4, 3, Padding::Same), Some((4, 1)));
        assert_eq!(conv_out_dim(3, 5, 1, Padding::Valid), None);
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(single(shape(&[4, 4, 2]), LayerKind::Dense { units: 3 }), Err(GraphError::Shape { .. })));
        assert!(matches!(
            single(shape(&[3, 1]), LayerKind::Conv1D { kernel: 5, stride: 1, padding: Padding::Valid, filters: 1 }),
            Err(GraphError::Shape { .. })
        ));
        let layers = vec![
            LayerSpec::new("a", LayerKind::Reshape { target: vec![2, 3] }, &[INPUT_NAME]),
            LayerSpec::new("b", LayerKind::Add, &["a", INPUT_NAME]),
        ];
        let err = ModelGraph::new("t", shape(&[6]), layers, WeightStore::new(), "b").unwrap_err();
        assert!(matches!(err, GraphError::Shape { ref layer, .. } if layer == "b"));
    }

    #[test]
    fn structural_errors() {
        let relu = |n: &str, i: &str| LayerSpec::new(n, LayerKind::ReLU, &[i]);
        let s = shape(&[4]);
        let e = ModelGraph::new("t", s.clone(), vec![relu("a", INPUT_NAME), relu("a", "a")], WeightStore::new(), "a");
        assert_eq!(e.unwrap_err(), GraphError::DuplicateName("a".into()));
        let e = ModelGraph::new("t", s.clone(), vec![relu("a", "b"), relu("b", "a")], WeightStore::new(), "b");
        assert!(matches!(e.unwrap_err(), GraphError::UnknownInput { .. }));
        let e = ModelGraph::new(
            "t",
            s.clone(),
            vec![relu("a", INPUT_NAME), relu("b", INPUT_NAME)],
            WeightStore::new(),
            "b",
        );
        assert_eq!(e.unwrap_err(), GraphError::Dangling("a".into()));
        let e = ModelGraph::new("t", s.clone(), vec![relu("a", INPUT_NAME)], WeightStore::new(), "zz");
        assert!(matches!(e.unwrap_err(), GraphError::UnknownOutput(_)));
        let mut w = WeightStore::new();
        w.insert("a".into(), LayerWeights { kernel: vec![], bias: vec![] });
        let e = ModelGraph::new("t", s.clone(), vec![relu("a", INPUT_NAME)], w, "a");
        assert!(matches!(e.unwrap_err(), GraphError::StrayWeights(_)));
        let mut w = WeightStore::new();
        w.insert("d".into(), LayerWeights { kernel: vec![0.0; 7], bias: vec![0.0; 2] });
        let e =
            ModelGraph::new("t", s, vec![LayerSpec::new("d", LayerKind::Dense { units: 2 }, &[INPUT_NAME])], w, "d");
        assert!(matches!(e.unwrap_err(), GraphError::Weights { ref layer, .. } if layer == "d"));
    }
}
