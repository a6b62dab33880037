use std::path::Path;

use tcuflow::arch::ArchConfig;
use tcuflow::ecg::{benchmark, evaluate, load_csv, logits, BeatRecord, Dataset, EcgError, EvalMode, BEAT_LEN};
use tcuflow::nnir::*;

fn data(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn dense_model(kernel: Vec<f64>, bias: Vec<f64>) -> ModelGraph {
    let mut w = WeightStore::new();
    w.insert("head".into(), LayerWeights { kernel, bias });
    ModelGraph::new(
        "dense",
        TensorShape::new(vec![BEAT_LEN]).unwrap(),
        vec![LayerSpec::new("head", LayerKind::Dense { units: 5 }, &[INPUT_NAME])],
        w,
        "head",
    )
    .unwrap()
}

/// Beats whose first five samples one-hot encode the label.
fn tagged(labels: &[u8]) -> Dataset {
    let records = labels
        .iter()
        .map(|&l| {
            let mut s = vec![0.25; BEAT_LEN];
            s[..5].fill(0.0);
            s[l as usize] = 1.0;
            BeatRecord::new(s, l).unwrap()
        })
        .collect();
    Dataset::new(records, "tagged")
}

#[test]
fn oracle_model_scores_perfectly_in_every_mode() {
    let mut kernel = vec![0.0; BEAT_LEN * 5];
    for c in 0..5 {
        kernel[c * 5 + c] = 1.0;
    }
    let g = dense_model(kernel, vec![0.0; 5]);
    let labels: Vec<u8> = (0..23).map(|i| (i * 7 % 5) as u8).collect();
    let ds = tagged(&labels);
    for mode in [EvalMode::Float, EvalMode::Quant, EvalMode::Compiled] {
        let m = evaluate(&g, &ds, &ArchConfig::pynq_z1(), mode).unwrap();
        assert_eq!(m.accuracy, 1.0, "{mode}");
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.total(), 23);
        for (t, row) in m.confusion.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                if t != p {
                    assert_eq!(n, 0);
                }
            }
        }
    }
}

#[test]
fn constant_model_predicts_one_class() {
    let g = dense_model(vec![0.0; BEAT_LEN * 5], vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    let ds = tagged(&[0, 1, 2, 2, 3, 4, 4, 4]);
    let m = evaluate(&g, &ds, &ArchConfig::pynq_z1(), EvalMode::Compiled).unwrap();
    assert_eq!(m.accuracy, 2.0 / 8.0);
    assert_eq!(m.per_class[2].recall, 1.0);
    assert_eq!(m.per_class[2].precision, 0.25);
    assert_eq!(m.per_class[4].recall, 0.0);
    assert!(m.confusion.iter().all(|row| row.iter().enumerate().all(|(p, &n)| p == 2 || n == 0)));
}

#[test]
fn empty_dataset_and_wrong_model_shape_are_rejected() {
    let g = dense_model(vec![0.0; BEAT_LEN * 5], vec![0.0; 5]);
    let empty = Dataset::new(vec![], "none");
    assert!(matches!(evaluate(&g, &empty, &ArchConfig::pynq_z1(), EvalMode::Float), Err(EcgError::Empty)));
    let mut w = WeightStore::new();
    w.insert("d".into(), LayerWeights { kernel: vec![0.0; BEAT_LEN * 3], bias: vec![0.0; 3] });
    let three = ModelGraph::new(
        "three",
        TensorShape::new(vec![BEAT_LEN]).unwrap(),
        vec![LayerSpec::new("d", LayerKind::Dense { units: 3 }, &[INPUT_NAME])],
        w,
        "d",
    )
    .unwrap();
    let ds = tagged(&[0]);
    assert!(matches!(evaluate(&three, &ds, &ArchConfig::pynq_z1(), EvalMode::Float), Err(EcgError::ModelOutput(3))));
}

#[test]
fn single_beat_benchmark_matches_its_sim_report() {
    let g = load_model(data("demo_ecg.model")).unwrap();
    let ds = load_csv(data("ecg_sample_500.csv")).unwrap();
    let arch = ArchConfig::pynq_z1();
    let b = benchmark(&g, &ds, &arch, 1, 1).unwrap();
    assert_eq!(b.latency_ms, b.sim.latency_ms);
    assert_eq!(b.throughput_gops, b.sim.throughput_gops);
    assert_eq!(b.mean_cycles, b.sim.total_cycles as f64);
    assert_eq!(b.macs_graph, count_macs(&g).total_macs);
    let recomputed = 2.0 * b.macs_graph as f64 / (b.sim.total_cycles as f64 / (arch.clock_mhz * 1e6)) / 1e9;
    assert!((recomputed - b.throughput_gops).abs() <= 1e-9);
    assert_eq!(b.metrics.total(), 1);
}

#[test]
fn benchmark_is_independent_of_worker_count() {
    let g = load_model(data("demo_ecg.model")).unwrap();
    let ds = load_csv(data("ecg_sample_500.csv")).unwrap();
    let arch = ArchConfig::pynq_z1();
    let a = benchmark(&g, &ds, &arch, 12, 1).unwrap();
    let b = benchmark(&g, &ds, &arch, 12, 3).unwrap();
    assert_eq!((a.mean_cycles, &a.sim, &a.metrics), (b.mean_cycles, &b.sim, &b.metrics));
    assert!(matches!(benchmark(&g, &ds, &arch, 0, 1), Err(EcgError::Parameter(_))));
    assert!(matches!(benchmark(&g, &ds, &arch, 5, 0), Err(EcgError::Parameter(_))));
}

#[test]
fn quant_and_compiled_logits_are_identical_on_the_demo() {
    let g = load_model(data("demo_ecg.model")).unwrap();
    let ds = load_csv(data("ecg_sample_500.csv")).unwrap();
    let arch = ArchConfig::pynq_z1();
    let beats = &ds.records[..40];
    let q = logits(&g, beats, &arch, EvalMode::Quant).unwrap();
    let c = logits(&g, beats, &arch, EvalMode::Compiled).unwrap();
    for (a, b) in q.iter().zip(&c) {
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()), "{a:?} vs {b:?}");
    }
}
