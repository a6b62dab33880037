use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tcuflow::arch::ArchConfig;
use tcuflow::compiler::{emit, load_bundle, lower, replay, CompileError, Region, TcuInstruction};
use tcuflow::nnir::demo::ecg_resnet;
use tcuflow::nnir::gen::{random_graph, random_input, GenOptions};
use tcuflow::nnir::*;
use tcuflow::tcusim::run;

fn shape(d: &[usize]) -> TensorShape {
    TensorShape::new(d.to_vec()).unwrap()
}

fn identity_dense(n: usize) -> ModelGraph {
    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        kernel[i * n + i] = 1.0;
    }
    let mut w = WeightStore::new();
    w.insert("d".into(), LayerWeights { kernel, bias: vec![0.0; n] });
    ModelGraph::new("id", shape(&[n]), vec![LayerSpec::new("d", LayerKind::Dense { units: n }, &[INPUT_NAME])], w, "d")
        .unwrap()
}

fn check_bit_exact(g: &ModelGraph, arch: &ArchConfig, x: &Tensor) {
    let prog = lower(g, arch).unwrap_or_else(|e| panic!("{e}"));
    let q = quantize_input(x, arch.format().unwrap());
    let want = execute_quant(g, &q).unwrap();
    let (got, rep) = run(&prog, &q).unwrap_or_else(|e| panic!("{e}"));
    assert_eq!(got, want, "graph {:?}", g.layers());
    assert!(rep.efficiency <= 1.0);
    assert!(rep.macs_executed >= rep.macs_graph);
}

#[test]
fn identity_dense_round_trips() {
    let g = identity_dense(8);
    let arch = ArchConfig::pynq_z1();
    let x = Tensor::new(shape(&[8]), vec![0.5, -1.0, 2.0, 3.25, 0.0, -7.5, 100.0, -0.25]).unwrap();
    let prog = lower(&g, &arch).unwrap();
    let (y, rep) = run(&prog, &quantize_input(&x, arch.format().unwrap())).unwrap();
    assert_eq!(y.dequantize(), x.data);
    assert_eq!(rep.latency_ms, rep.total_cycles as f64 / (100.0 * 1000.0));
}

#[test]
fn dense_local_peak_is_small() {
    let prog = lower(&identity_dense(8), &ArchConfig::pynq_z1()).unwrap();
    let r = replay(&prog).unwrap();
    assert!(r.local_peak <= 3, "local peak {}", r.local_peak);
}

#[test]
fn demo_net_is_bit_exact() {
    let g = ecg_resnet(3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::new(shape(&[187, 1]), (0..187).map(|i| ((i as f64) / 20.0).sin().abs()).collect()).unwrap();
    check_bit_exact(&g, &ArchConfig::pynq_z1(), &x);
    let x = random_input(&mut rng, g.input_shape());
    check_bit_exact(&g, &ArchConfig::pynq_z1(), &x);
}

#[test]
fn random_graphs_are_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let arch = ArchConfig::pynq_z1();
    for _ in 0..60 {
        let g = random_graph(&mut rng, &GenOptions::default());
        let x = random_input(&mut rng, g.input_shape());
        check_bit_exact(&g, &arch, &x);
    }
}

#[test]
fn small_arrays_and_tight_memories() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let arch = ArchConfig { array_size: 4, simd_lanes: 4, local_depth: 23, acc_depth: 7, ..ArchConfig::pynq_z1() };
    for _ in 0..40 {
        let g = random_graph(&mut rng, &GenOptions { max_dim: 12, ..GenOptions::default() });
        let x = random_input(&mut rng, g.input_shape());
        check_bit_exact(&g, &arch, &x);
    }
}

#[test]
fn compiled_programs_replay_cleanly() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let arch = ArchConfig::pynq_z1();
    for _ in 0..40 {
        let g = random_graph(&mut rng, &GenOptions::default());
        let prog = lower(&g, &arch).unwrap();
        replay(&prog).unwrap_or_else(|e| panic!("{e}"));
        let mut loaded = false;
        for i in &prog.instructions {
            match i {
                TcuInstruction::LoadWeights { .. } => loaded = true,
                TcuInstruction::MatMul { zero_weights, .. } => assert!(loaded || *zero_weights),
                _ => {}
            }
        }
    }
}

#[test]
fn lowering_is_deterministic() {
    let g = ecg_resnet(5);
    let arch = ArchConfig::pynq_z1();
    assert_eq!(lower(&g, &arch).unwrap(), lower(&g, &arch).unwrap());
}

#[test]
fn bundle_round_trip() {
    let g = ecg_resnet(5);
    let arch = ArchConfig::pynq_z1();
    let prog = lower(&g, &arch).unwrap();
    let b = emit(&prog, &g);
    assert_eq!(load_bundle(&b, &arch).unwrap(), prog);
    let wide = ArchConfig { array_size: 16, simd_lanes: 16, ..arch };
    assert!(load_bundle(&b, &wide).unwrap_err().to_string().contains("array_size"));
}

#[test]
fn unequal_add_is_a_shape_error() {
    let layers = vec![
        LayerSpec::new("d", LayerKind::Dense { units: 3 }, &[INPUT_NAME]),
        LayerSpec::new("a", LayerKind::Add, &["d", INPUT_NAME]),
    ];
    let mut w = WeightStore::new();
    w.insert("d".into(), LayerWeights { kernel: vec![0.0; 12], bias: vec![0.0; 3] });
    let err = ModelGraph::new("bad", shape(&[4]), layers, w, "a").unwrap_err();
    assert!(matches!(CompileError::from(err), CompileError::Graph(GraphError::Shape { .. })));
}

#[test]
fn gathers_need_a_representable_one() {
    let layers = vec![LayerSpec::new("f", LayerKind::Flatten, &[INPUT_NAME])];
    let g = ModelGraph::new("f", shape(&[3, 2]), layers, WeightStore::new(), "f").unwrap();
    let arch = ArchConfig { frac_bits: 15, ..ArchConfig::pynq_z1() };
    match lower(&g, &arch) {
        Err(CompileError::Unsupported { layer, .. }) => assert_eq!(layer, "f"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn io_bindings_live_in_dram1() {
    let prog = lower(&ecg_resnet(1), &ArchConfig::pynq_z1()).unwrap();
    assert_eq!(prog.input.region, Region::Dram1);
    assert_eq!(prog.output.shape.dims(), &[5]);
}
