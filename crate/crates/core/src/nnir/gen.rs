//! Random valid graphs and inputs for property tests and fuzzing the
//! compiler against the reference executors.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::*;

#[derive(Debug, Clone)]
pub struct GenOptions {
    /// Upper bound on the number of layers.
    pub max_layers: usize,
    /// Upper bound on any dimension (lengths, channels, units).
    pub max_dim: usize,
    /// Weights and biases are drawn uniformly from `[-weight_range, weight_range]`.
    pub weight_range: f64,
    /// Restrict to layers without ReLU/MaxPool and draw zero biases, so the
    /// graph is linear in its input.
    pub linear_only: bool,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self { max_layers: 6, max_dim: 32, weight_range: 0.5, linear_only: false }
    }
}

#[derive(Clone, Copy)]
enum Pick {
    Conv,
    Pool,
    Relu,
    Add,
    Flatten,
    Reshape,
    Gap,
    Dense,
    Branch,
}

/// A layer kind whose output shape equals its input shape.
fn shape_preserving(rng: &mut impl Rng, cur: &TensorShape, linear_only: bool) -> LayerKind {
    if !linear_only && rng.random_bool(0.3) {
        return LayerKind::ReLU;
    }
    match cur.rank() {
        1 => LayerKind::Dense { units: cur.elements() },
        2 => LayerKind::Conv1D {
            kernel: rng.random_range(1..=3.min(cur.dims()[0])),
            stride: 1,
            padding: Padding::Same,
            filters: cur.channels(),
        },
        _ => LayerKind::Conv2D {
            kernel: [3.min(cur.dims()[0]), 1],
            stride: [1, 1],
            padding: Padding::Same,
            filters: cur.channels(),
        },
    }
}

/// Random graph with between 1 and `opts.max_layers` layers.
pub fn random_graph(rng: &mut impl Rng, opts: &GenOptions) -> ModelGraph {
    let d = opts.max_dim.max(2);
    let input = match rng.random_range(0..3) {
        0 => vec![rng.random_range(1..=d)],
        1 => vec![rng.random_range(3..=d), rng.random_range(1..=6.min(d))],
        _ => vec![rng.random_range(3..=10.min(d)), rng.random_range(3..=10.min(d)), rng.random_range(1..=4.min(d))],
    };
    let input = TensorShape::new(input).unwrap();
    let n_layers = rng.random_range(1..=opts.max_layers.max(1));
    let mut tensors: Vec<(String, TensorShape)> = vec![(INPUT_NAME.to_string(), input.clone())];
    let mut layers = Vec::new();
    let mut weights = WeightStore::new();

    let mut i = 0;
    while i < n_layers {
        let (cur_name, cur) = tensors.last().cloned().unwrap();
        let partner: Vec<&(String, TensorShape)> = tensors.iter().filter(|(_, s)| *s == cur).collect();
        let mut options = vec![];
        match cur.rank() {
            1 => options.extend([Pick::Dense, Pick::Dense, Pick::Reshape]),
            _ => options.extend([Pick::Conv, Pick::Conv, Pick::Flatten, Pick::Gap]),
        }
        if !opts.linear_only {
            options.push(Pick::Relu);
            if cur.rank() > 1 && cur.spatial().iter().all(|&s| s >= 2) {
                options.push(Pick::Pool);
            }
        }
        if partner.len() > 1 {
            options.push(Pick::Add);
        }
        if n_layers - i >= 3 && cur.elements() <= 32 * 32 {
            options.push(Pick::Branch);
        }
        let pick = *options.choose(rng).unwrap();
        let mut specs: Vec<(LayerKind, Vec<String>)> = Vec::new();
        match pick {
            Pick::Dense => specs.push((LayerKind::Dense { units: rng.random_range(1..=d) }, vec![cur_name])),
            Pick::Reshape => {
                let f = cur.elements();
                let divisors: Vec<usize> = (1..=f).filter(|k| f % k == 0 && f / k <= d).collect();
                let a = *divisors.choose(rng).unwrap();
                specs.push((LayerKind::Reshape { target: vec![a, f / a] }, vec![cur_name]));
            }
            Pick::Conv => {
                let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
                let filters = rng.random_range(1..=12.min(d));
                let kind = if cur.rank() == 2 {
                    let kernel = rng.random_range(1..=5.min(cur.dims()[0]));
                    let stride = rng.random_range(1..=3);
                    LayerKind::Conv1D { kernel, stride, padding, filters }
                } else {
                    let kernel =
                        [rng.random_range(1..=3.min(cur.dims()[0])), rng.random_range(1..=3.min(cur.dims()[1]))];
                    let stride = [rng.random_range(1..=2), rng.random_range(1..=2)];
                    LayerKind::Conv2D { kernel, stride, padding, filters }
                };
                specs.push((kind, vec![cur_name]));
            }
            Pick::Pool => {
                let kind = if cur.rank() == 2 {
                    let pool = rng.random_range(2..=3.min(cur.dims()[0]));
                    LayerKind::MaxPool1D { pool, stride: rng.random_range(1..=pool) }
                } else {
                    let pool = [rng.random_range(2..=2.min(cur.dims()[0])), rng.random_range(1..=2.min(cur.dims()[1]))];
                    LayerKind::MaxPool2D { pool, stride: [rng.random_range(1..=2), rng.random_range(1..=2)] }
                };
                specs.push((kind, vec![cur_name]));
            }
            Pick::Relu => specs.push((LayerKind::ReLU, vec![cur_name])),
            Pick::Flatten => specs.push((LayerKind::Flatten, vec![cur_name])),
            Pick::Gap => specs.push((LayerKind::GlobalAvgPool, vec![cur_name])),
            Pick::Add => {
                let other = partner.iter().filter(|(n, _)| *n != cur_name).collect::<Vec<_>>();
                let other = other.choose(rng).unwrap().0.clone();
                specs.push((LayerKind::Add, vec![cur_name, other]));
            }
            Pick::Branch => {
                // Two independent shape-preserving layers joined by an Add.
                let a = shape_preserving(rng, &cur, opts.linear_only);
                let b = shape_preserving(rng, &cur, opts.linear_only);
                specs.push((a, vec![cur_name.clone()]));
                specs.push((b, vec![cur_name]));
                specs.push((LayerKind::Add, vec![format!("l{i}"), format!("l{}", i + 1)]));
            }
        }
        for (kind, inputs) in specs {
            let name = format!("l{i}");
            let src = tensors.iter().find(|(n, _)| *n == inputs[0]).unwrap().1.clone();
            let spec = LayerSpec { name: name.clone(), kind, inputs };
            let ins = vec![src.clone(); spec.kind.arity()];
            let out = layer_output_shape(&spec, &ins).expect("generator only builds valid layers");
            if spec.kind.is_parameterized() {
                let (k, b) = param_shape(&spec.kind, &src);
                let r = opts.weight_range;
                let kernel = (0..k).map(|_| rng.random_range(-r..=r)).collect();
                let bias = (0..b).map(|_| if opts.linear_only { 0.0 } else { rng.random_range(-r..=r) }).collect();
                weights.insert(name.clone(), LayerWeights { kernel, bias });
            }
            layers.push(spec);
            tensors.push((name, out));
            i += 1;
        }
    }
    let output = tensors.last().unwrap().0.clone();
    ModelGraph::new("random", input, layers, weights, output).expect("generator only builds valid graphs")
}

/// Uniform input in `[-1, 1]`.
pub fn random_input(rng: &mut impl Rng, shape: &TensorShape) -> Tensor {
    Tensor { shape: shape.clone(), data: (0..shape.elements()).map(|_| rng.random_range(-1.0..=1.0)).collect() }
}

/// A random topological order of `g`'s layers (indices into
/// `g.layers()`), by Kahn's algorithm with random tie-breaking.
pub fn random_topo_order(rng: &mut impl Rng, g: &ModelGraph) -> Vec<usize> {
    let layers = g.layers();
    let mut placed: Vec<bool> = vec![false; layers.len()];
    let mut done: std::collections::HashSet<&str> = [INPUT_NAME].into_iter().collect();
    let mut order = Vec::with_capacity(layers.len());
    while order.len() < layers.len() {
        let ready: Vec<usize> = (0..layers.len())
            .filter(|&i| !placed[i] && layers[i].inputs.iter().all(|x| done.contains(x.as_str())))
            .collect();
        let &i = ready.choose(rng).unwrap();
        placed[i] = true;
        done.insert(layers[i].name.as_str());
        order.push(i);
    }
    order
}
