//! The demo ECG beat classifier: a small residual 1-D conv net over
//! 187-sample beats with five output logits.
//!
//! ```text
//! input [187,1]
//! conv1  Conv1D k7 s2 valid 8   -> [91,8]   relu1
//! conv2  Conv1D k3 s1 same  8   -> [91,8]   relu2
//! conv3  Conv1D k3 s1 same  8   -> [91,8]
//! add1   conv3 + relu1                       relu3
//! pool1  MaxPool1D 3/3          -> [30,8]
//! conv4  Conv1D k3 s1 valid 16  -> [28,16]  relu4
//! pool2  MaxPool1D 4/4          -> [7,16]
//! flat   Flatten                -> [112]
//! logits Dense 5                -> [5]
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;

pub const BEAT_LEN: usize = 187;
pub const CLASSES: usize = 5;

pub fn ecg_resnet_layers() -> Vec<LayerSpec> {
    let conv = |k, s, p, f| LayerKind::Conv1D { kernel: k, stride: s, padding: p, filters: f };
    vec![
        LayerSpec::new("conv1", conv(7, 2, Padding::Valid, 8), &[INPUT_NAME]),
        LayerSpec::new("relu1", LayerKind::ReLU, &["conv1"]),
        LayerSpec::new("conv2", conv(3, 1, Padding::Same, 8), &["relu1"]),
        LayerSpec::new("relu2", LayerKind::ReLU, &["conv2"]),
        LayerSpec::new("conv3", conv(3, 1, Padding::Same, 8), &["relu2"]),
        LayerSpec::new("add1", LayerKind::Add, &["conv3", "relu1"]),
        LayerSpec::new("relu3", LayerKind::ReLU, &["add1"]),
        LayerSpec::new("pool1", LayerKind::MaxPool1D { pool: 3, stride: 3 }, &["relu3"]),
        LayerSpec::new("conv4", conv(3, 1, Padding::Valid, 16), &["pool1"]),
        LayerSpec::new("relu4", LayerKind::ReLU, &["conv4"]),
        LayerSpec::new("pool2", LayerKind::MaxPool1D { pool: 4, stride: 4 }, &["relu4"]),
        LayerSpec::new("flat", LayerKind::Flatten, &["pool2"]),
        LayerSpec::new("logits", LayerKind::Dense { units: CLASSES }, &["flat"]),
    ]
}

/// Round to a multiple of `2^-frac_bits` so the weights are exactly
/// representable in fixed point.
pub fn snap(x: f64, frac_bits: u32) -> f64 {
    let s = (1u64 << frac_bits) as f64;
    (x * s).round_ties_even() / s
}

/// Demo topology with He-initialized weights drawn from `seed`, snapped to
/// the 8-fractional-bit grid. Biases start at zero.
pub fn ecg_resnet(seed: u64) -> ModelGraph {
    let layers = ecg_resnet_layers();
    let input = TensorShape::new(vec![BEAT_LEN, 1]).unwrap();
    let shapes = infer(&input, &layers).expect("demo topology is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = WeightStore::new();
    for l in &layers {
        if !l.kind.is_parameterized() {
            continue;
        }
        let x = &shapes[&l.inputs[0]];
        let (k, b) = param_shape(&l.kind, x);
        let fan_in = k / b;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
        let kernel = (0..k).map(|_| snap(normal.sample(&mut rng), 8)).collect();
        weights.insert(l.name.clone(), LayerWeights { kernel, bias: vec![0.0; b] });
    }
    ModelGraph::new("ecg_resnet", input, layers, weights, "logits").unwrap()
}
