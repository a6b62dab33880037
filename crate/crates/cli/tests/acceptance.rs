//! Acceptance criteria. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcuflow::arch::ArchConfig;
use tcuflow::compiler::{emit, load_bundle, lower, read_bundle_dir, write_bundle_dir, BundleError, TcuInstruction};
use tcuflow::ecg::{
    add_gaussian_noise, argmax, load_csv, logits, smote_resample, stratified_split, write_csv_to, AugmentConfig,
    BeatRecord, Dataset, EvalMode, BEAT_LEN,
};
use tcuflow::nnir::gen::{random_graph, random_input, GenOptions};
use tcuflow::nnir::*;
use tcuflow::tcusim::{run, SimReport};

const GRAPHS: usize = 120;
const GRAPH_SEED: u64 = 0xACCE_0002;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn resource_table() -> Outcome {
    let start = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_tcuflow"))
        .args(["arch", "--config", "configs/pynq_z1.arch", "--budget", "configs/zynq7000.budget", "--json"])
        .current_dir(root())
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(o.status.code() == Some(0), || format!("exit status {:?}", o.status))?;
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).map_err(|e| e.to_string())?;
    let want =
        [("LUT", 17579, 23.75), ("FF", 20060, 18.85), ("BRAM", 1374, 41.64), ("IO", 36, 24.00), ("DSP", 85, 53.13)];
    let mut shown = Vec::new();
    for (r, used, pct) in want {
        let got_used = v["used"][r].as_u64().ok_or(format!("no used.{r}"))?;
        let got_pct = v["pct"][r].as_f64().ok_or(format!("no pct.{r}"))?;
        check(got_used == used, || format!("{r}: used {got_used}, expected {used}"))?;
        check((got_pct - pct).abs() <= 0.01 + 1e-9, || format!("{r}: {got_pct}% vs {pct}%"))?;
        shown.push(format!("{r} {got_used} ({got_pct:.2}%)"));
    }
    check(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("{} in {:.0} ms", shown.join(", "), elapsed.as_secs_f64() * 1e3))
}

fn graphs() -> Vec<(ModelGraph, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(GRAPH_SEED);
    let opts = GenOptions { max_layers: 6, max_dim: 32, ..GenOptions::default() };
    (0..GRAPHS)
        .map(|_| {
            let g = random_graph(&mut rng, &opts);
            let x = random_input(&mut rng, g.input_shape());
            (g, x)
        })
        .collect()
}

fn oracle_equivalence(cases: &[(ModelGraph, Tensor)]) -> Outcome {
    let start = Instant::now();
    let arch = ArchConfig::pynq_z1();
    let fmt = arch.format().unwrap();
    let mut logits = 0;
    for (i, (g, x)) in cases.iter().enumerate() {
        let q = quantize_input(x, fmt);
        let want = execute_quant(g, &q).map_err(|e| format!("graph {i}: {e}"))?;
        let prog = lower(g, &arch).map_err(|e| format!("graph {i}: {e}"))?;
        let (got, _) = run(&prog, &q).map_err(|e| format!("graph {i}: {e}"))?;
        check(got.shape() == want.shape(), || format!("graph {i}: shape {} vs {}", got.shape(), want.shape()))?;
        if let Some(j) = got.raw().iter().zip(want.raw()).position(|(a, b)| a != b) {
            return Err(format!("graph {i} element {j}: {} vs {}", got.raw()[j], want.raw()[j]));
        }
        logits += got.raw().len();
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!("{} graphs, {logits} outputs bit-exact in {:.1} s", cases.len(), elapsed.as_secs_f64()))
}

fn mac_accounting(cases: &[(ModelGraph, Tensor)]) -> Outcome {
    let mut total = 0;
    for (i, (g, x)) in cases.iter().enumerate() {
        let counted = count_macs(g).total_macs;
        let (_, multiplies) = execute_float_counted(g, x).map_err(|e| format!("graph {i}: {e}"))?;
        check(counted == multiplies, || format!("graph {i}: count_macs {counted}, executor {multiplies}"))?;
        total += counted;
    }
    Ok(format!("{} graphs, {total} MACs, all equal", cases.len()))
}

fn demo_fidelity() -> Outcome {
    let g = load_model(root().join("data/demo_ecg.model")).map_err(|e| e.to_string())?;
    let ds = load_csv(root().join("data/ecg_sample_500.csv")).map_err(|e| e.to_string())?;
    check(ds.len() == 500, || format!("{} beats", ds.len()))?;
    let arch = ArchConfig::pynq_z1();
    let f = logits(&g, &ds.records, &arch, EvalMode::Float).map_err(|e| e.to_string())?;
    let q = logits(&g, &ds.records, &arch, EvalMode::Quant).map_err(|e| e.to_string())?;
    let max_err = f.iter().zip(&q).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs())).fold(0.0, f64::max);
    let agree = f.iter().zip(&q).filter(|(a, b)| argmax(a) == argmax(b)).count() as f64 / ds.len() as f64;
    check(max_err <= 0.05, || format!("max |err| {max_err:.4} > 0.05"))?;
    check(agree >= 0.95, || format!("argmax agreement {agree:.3} < 0.95"))?;
    Ok(format!("max |err| {max_err:.4}, argmax agreement {:.1}%", agree * 100.0))
}

fn identity_program(n: usize) -> (tcuflow::compiler::TcuProgram, Tensor) {
    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        kernel[i * n + i] = 1.0;
    }
    let mut w = WeightStore::new();
    w.insert("d".into(), LayerWeights { kernel, bias: vec![0.0; n] });
    let shape = TensorShape::new(vec![n]).unwrap();
    let g = ModelGraph::new(
        "id",
        shape.clone(),
        vec![LayerSpec::new("d", LayerKind::Dense { units: n }, &[INPUT_NAME])],
        w,
        "d",
    )
    .unwrap();
    let x = Tensor::new(shape, (0..n).map(|i| i as f64 / 8.0).collect()).unwrap();
    (lower(&g, &ArchConfig::pynq_z1()).unwrap(), x)
}

fn metric_formulas() -> Outcome {
    let arch = ArchConfig::pynq_z1();
    let fmt = arch.format().unwrap();
    let g = load_model(root().join("data/demo_ecg.model")).map_err(|e| e.to_string())?;
    let ds = load_csv(root().join("data/ecg_sample_500.csv")).map_err(|e| e.to_string())?;
    let prog = lower(&g, &arch).map_err(|e| e.to_string())?;
    let mut reports: Vec<SimReport> = Vec::new();
    for r in &ds.records[..5] {
        let x = Tensor::new(g.input_shape().clone(), r.samples.clone()).unwrap();
        reports.push(run(&prog, &quantize_input(&x, fmt)).map_err(|e| e.to_string())?.1);
    }
    let (idp, idx) = identity_program(8);
    reports.push(run(&idp, &quantize_input(&idx, fmt)).map_err(|e| e.to_string())?.1);
    for rep in &reports {
        let latency = rep.total_cycles as f64 / (rep.clock_mhz * 1e3);
        let gops = 2.0 * rep.macs_graph as f64 / (rep.total_cycles as f64 / (rep.clock_mhz * 1e6)) / 1e9;
        check((latency - rep.latency_ms).abs() <= 1e-9, || format!("latency {latency} vs {}", rep.latency_ms))?;
        check((gops - rep.throughput_gops).abs() <= 1e-9, || format!("throughput {gops} vs {}", rep.throughput_gops))?;
    }

    // Pad the identity program with NoOps to exactly 100 000 cycles at 100 MHz.
    let base = reports.last().unwrap().total_cycles;
    let mut padded = idp.clone();
    padded.instructions.extend(std::iter::repeat_n(TcuInstruction::NoOp, (100_000 - base) as usize));
    let (_, rep) = run(&padded, &quantize_input(&idx, fmt)).map_err(|e| e.to_string())?;
    check(rep.total_cycles == 100_000 && rep.clock_mhz == 100.0, || format!("{} cycles", rep.total_cycles))?;
    check(rep.latency_ms == 1.0, || format!("10^5 cycles gave {} ms", rep.latency_ms))?;
    Ok(format!("{} reports within 1e-9; 100000 cycles at 100 MHz = {} ms", reports.len(), rep.latency_ms))
}

fn csv_bytes(ds: &Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv_to(ds, &mut buf).unwrap();
    buf
}

fn pipeline(ds: &Dataset, seed: u64) -> Result<Vec<u8>, String> {
    let noisy = add_gaussian_noise(ds, &AugmentConfig { noise_sigma: 0.05, seed }).map_err(|e| e.to_string())?;
    let balanced = smote_resample(&noisy, 5, seed).map_err(|e| e.to_string())?;
    let (train, test) = stratified_split(&balanced, 0.8, seed).map_err(|e| e.to_string())?;
    let mut out = csv_bytes(&train);
    out.extend(csv_bytes(&test));
    Ok(out)
}

fn pipeline_determinism() -> Outcome {
    let ds = load_csv(root().join("data/ecg_sample_500.csv")).map_err(|e| e.to_string())?;
    let balanced = smote_resample(&ds, 5, 11).map_err(|e| e.to_string())?;
    let counts = balanced.class_counts();
    check(counts.iter().all(|&c| c == counts[0]), || format!("SMOTE counts {counts:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let single: Vec<BeatRecord> =
        (0..100).map(|_| BeatRecord::new((0..BEAT_LEN).map(|_| rng.random::<f64>()).collect(), 3).unwrap()).collect();
    let (train, test) = stratified_split(&Dataset::new(single, "one class"), 0.8, 5).map_err(|e| e.to_string())?;
    check(train.len() == 80 && test.len() == 20, || format!("split {}/{}", train.len(), test.len()))?;

    let a = pipeline(&ds, 42)?;
    let b = pipeline(&ds, 42)?;
    check(a == b, || "two seeded runs differ".into())?;
    check(a != pipeline(&ds, 43)?, || "different seeds gave identical output".into())?;
    Ok(format!("SMOTE counts {counts:?}, split 80/20, {} identical bytes across runs", a.len()))
}

fn artifact_round_trip() -> Outcome {
    let arch = ArchConfig::pynq_z1();
    let g = load_model(root().join("data/demo_ecg.model")).map_err(|e| e.to_string())?;
    let prog = lower(&g, &arch).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = write_bundle_dir(&emit(&prog, &g), dir.path(), "demo").map_err(|e| e.to_string())?;
    let bundle = read_bundle_dir(&manifest).map_err(|e| e.to_string())?;
    let back = load_bundle(&bundle, &arch).map_err(|e| e.to_string())?;
    check(back.instructions == prog.instructions, || "instruction stream differs".into())?;
    check(back.constants == prog.constants, || "constants differ".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let total = bundle.program.len() + bundle.constants.len();
    let mut detected = 0;
    for _ in 0..100 {
        let mut bad = bundle.clone();
        let pos = rng.random_range(0..total);
        let flip = rng.random_range(1..=255u8);
        if pos < bad.program.len() {
            bad.program[pos] ^= flip;
        } else {
            bad.constants[pos - bad.program.len()] ^= flip;
        }
        if matches!(load_bundle(&bad, &arch), Err(BundleError::Checksum { .. })) {
            detected += 1;
        }
    }
    check(detected == 100, || format!("{detected}/100 corruptions detected"))?;
    Ok(format!("{} instructions round-trip; {detected}/100 corruptions detected", back.instructions.len()))
}

fn main() -> ExitCode {
    let cases = graphs();
    let criteria: [Criterion; 7] = [
        ("resource table", Box::new(resource_table)),
        ("compiler/simulator equivalence", Box::new(|| oracle_equivalence(&cases))),
        ("MAC accounting", Box::new(|| mac_accounting(&cases))),
        ("float vs fixed-point fidelity", Box::new(demo_fidelity)),
        ("metric formulas", Box::new(metric_formulas)),
        ("pipeline determinism and balance", Box::new(pipeline_determinism)),
        ("artifact round trip", Box::new(artifact_round_trip)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
