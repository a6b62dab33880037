//! Artifact bundles: a text manifest, a binary instruction stream, and a
//! binary constants image, tied together by a CRC-32 of the two streams.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::isa::{decode_program, encode_program, DecodeError};
use super::{IoBinding, LayerSpan, Region, TcuProgram};
use crate::arch::{ArchConfig, ARCH_KEYS};
use crate::kv::{self, KvError};
use crate::nnir::{ModelGraph, TensorShape};

pub const BUNDLE_FORMAT: &str = "tcuflow-bundle/1";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("manifest: {0}")]
    Syntax(#[from] KvError),
    #[error("manifest: missing key `{0}`")]
    MissingKey(String),
    #[error("manifest: unsupported format `{0}`")]
    Format(String),
    #[error("checksum mismatch: manifest says {expected:08x}, streams hash to {actual:08x}")]
    Checksum { expected: u32, actual: u32 },
    #[error("bundle compiled for {field} = {bundle}, target has {target}")]
    Incompatible { field: &'static str, bundle: String, target: String },
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("{what}: manifest says {expected}, found {found}")]
    Size { what: &'static str, expected: usize, found: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Parsed `.tmodel` manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleManifest {
    pub model: String,
    pub arch: ArchConfig,
    pub instructions: usize,
    pub constant_vectors: usize,
    pub graph_macs: u64,
    pub input: IoBinding,
    pub output: IoBinding,
    pub spans: Vec<LayerSpan>,
    pub checksum: u32,
    /// Sibling file names, set when written to disk.
    pub program_file: String,
    pub constants_file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactBundle {
    pub manifest: BundleManifest,
    pub program: Vec<u8>,
    pub constants: Vec<u8>,
}

fn checksum(program: &[u8], constants: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(program);
    h.update(constants);
    h.finalize()
}

fn storage_bytes(arch: &ArchConfig) -> usize {
    arch.data_width_bits.div_ceil(8) as usize
}

fn clean(name: &str) -> String {
    name.chars().map(|c| if c == '#' || c.is_control() { '_' } else { c }).collect()
}

fn dims(shape: &TensorShape) -> String {
    shape.dims().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ")
}

fn binding(b: &IoBinding) -> String {
    format!("{} {} {}", b.region, b.base, b.extent)
}

impl BundleManifest {
    pub fn to_text(&self) -> String {
        let a = &self.arch;
        let arch_values = [
            a.array_size.to_string(),
            a.data_width_bits.to_string(),
            a.frac_bits.to_string(),
            a.local_depth.to_string(),
            a.acc_depth.to_string(),
            a.dram0_depth.to_string(),
            a.dram1_depth.to_string(),
            a.clock_mhz.to_string(),
            a.dram_latency_factor.to_string(),
            a.simd_lanes.to_string(),
        ];
        let mut s = format!("format = {BUNDLE_FORMAT}\nmodel = {}\n", clean(&self.model));
        for (k, v) in ARCH_KEYS.iter().zip(arch_values) {
            s += &format!("arch.{k} = {v}\n");
        }
        s += &format!(
            "program = {}\nconstants = {}\ninstructions = {}\nconstant_vectors = {}\ngraph_macs = {}\n\
             input_shape = {}\noutput_shape = {}\ninput = {}\noutput = {}\n",
            self.program_file,
            self.constants_file,
            self.instructions,
            self.constant_vectors,
            self.graph_macs,
            dims(&self.input.shape),
            dims(&self.output.shape),
            binding(&self.input),
            binding(&self.output),
        );
        for (i, sp) in self.spans.iter().enumerate() {
            s += &format!("span.{i} = {} {} {}\n", clean(&sp.name), sp.start, sp.end);
        }
        s += &format!("checksum = {:08x}\n", self.checksum);
        s
    }

    pub fn parse(text: &str) -> Result<Self, BundleError> {
        let entries = kv::parse(text)?;
        let get =
            |key: &str| entries.iter().find(|e| e.key == key).ok_or_else(|| BundleError::MissingKey(key.to_string()));
        let bad = |e: &kv::KvEntry| KvError { line: e.line, message: format!("invalid value for `{}`", e.key) };
        let format = get("format")?;
        if format.value != BUNDLE_FORMAT {
            return Err(BundleError::Format(format.value.clone()));
        }
        let mut arch_text = String::new();
        for k in ARCH_KEYS {
            arch_text += &format!("{k} = {}\n", get(&format!("arch.{k}"))?.value);
        }
        let arch = ArchConfig::parse(&arch_text).map_err(|_| bad(get("arch.array_size").unwrap()))?;
        let shape = |key: &str| -> Result<TensorShape, BundleError> {
            let e = get(key)?;
            let d: Result<Vec<usize>, _> = e.value.split_whitespace().map(str::parse).collect();
            Ok(d.ok().and_then(|d| TensorShape::new(d).ok()).ok_or_else(|| bad(e))?)
        };
        let io = |key: &str, shape: TensorShape| -> Result<IoBinding, BundleError> {
            let e = get(key)?;
            let parts: Vec<&str> = e.value.split_whitespace().collect();
            let region = Region::ALL.into_iter().find(|r| Some(&r.name()) == parts.first());
            match (region, parts.get(1).and_then(|v| v.parse().ok()), parts.get(2).and_then(|v| v.parse().ok())) {
                (Some(region), Some(base), Some(extent)) if parts.len() == 3 => {
                    Ok(IoBinding { region, base, extent, shape })
                }
                _ => Err(bad(e).into()),
            }
        };
        let mut spans = Vec::new();
        for i in 0.. {
            let Some(e) = entries.iter().find(|e| e.key == format!("span.{i}")) else { break };
            let parts: Vec<&str> = e.value.rsplitn(3, ' ').collect();
            match parts.as_slice() {
                [end, start, name] => spans.push(LayerSpan {
                    name: name.to_string(),
                    start: start.parse().map_err(|_| bad(e))?,
                    end: end.parse().map_err(|_| bad(e))?,
                }),
                _ => return Err(bad(e).into()),
            }
        }
        let checksum = get("checksum")?;
        Ok(Self {
            model: get("model")?.value.clone(),
            arch,
            instructions: kv::parse_value(get("instructions")?)?,
            constant_vectors: kv::parse_value(get("constant_vectors")?)?,
            graph_macs: kv::parse_value(get("graph_macs")?)?,
            input: io("input", shape("input_shape")?)?,
            output: io("output", shape("output_shape")?)?,
            spans,
            checksum: u32::from_str_radix(&checksum.value, 16).map_err(|_| bad(checksum))?,
            program_file: get("program")?.value.clone(),
            constants_file: get("constants")?.value.clone(),
        })
    }
}

/// Package a compiled program.
pub fn emit(prog: &TcuProgram, g: &ModelGraph) -> ArtifactBundle {
    let program = encode_program(&prog.instructions);
    let width = storage_bytes(&prog.arch);
    let constants: Vec<u8> = prog.constants.iter().flat_map(|v| v.to_le_bytes()[..width].to_vec()).collect();
    let manifest = BundleManifest {
        model: g.name().to_string(),
        arch: prog.arch.clone(),
        instructions: prog.instructions.len(),
        constant_vectors: prog.constants.len() / prog.arch.array_size as usize,
        graph_macs: prog.graph_macs,
        input: IoBinding { shape: g.input_shape().clone(), ..prog.input.clone() },
        output: IoBinding { shape: g.output_shape().clone(), ..prog.output.clone() },
        spans: prog.spans.clone(),
        checksum: checksum(&program, &constants),
        program_file: "model.tprog".into(),
        constants_file: "model.tdata".into(),
    };
    ArtifactBundle { manifest, program, constants }
}

/// Verify and decode a bundle for execution on `arch`.
pub fn load_bundle(bundle: &ArtifactBundle, arch: &ArchConfig) -> Result<TcuProgram, BundleError> {
    let m = &bundle.manifest;
    let actual = checksum(&bundle.program, &bundle.constants);
    if actual != m.checksum {
        return Err(BundleError::Checksum { expected: m.checksum, actual });
    }
    for (field, b, t) in [
        ("array_size", m.arch.array_size, arch.array_size),
        ("data_width_bits", m.arch.data_width_bits, arch.data_width_bits),
        ("frac_bits", m.arch.frac_bits, arch.frac_bits),
    ] {
        if b != t {
            return Err(BundleError::Incompatible { field, bundle: b.to_string(), target: t.to_string() });
        }
    }
    let instructions = decode_program(&bundle.program)?;
    if instructions.len() != m.instructions {
        return Err(BundleError::Size { what: "instructions", expected: m.instructions, found: instructions.len() });
    }
    let width = storage_bytes(arch);
    let lanes = arch.array_size as usize;
    let expected = m.constant_vectors * lanes * width;
    if bundle.constants.len() != expected {
        return Err(BundleError::Size { what: "constant bytes", expected, found: bundle.constants.len() });
    }
    let shift = 32 - 8 * width as u32;
    let constants = bundle
        .constants
        .chunks_exact(width)
        .map(|c| {
            let mut b = [0u8; 4];
            b[..width].copy_from_slice(c);
            // Sign-extend from the storage width.
            (i32::from_le_bytes(b) << shift) >> shift
        })
        .collect();
    Ok(TcuProgram {
        model_name: m.model.clone(),
        arch: arch.clone(),
        instructions,
        constants,
        input: m.input.clone(),
        output: m.output.clone(),
        graph_macs: m.graph_macs,
        spans: m.spans.clone(),
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io { path: path.to_path_buf(), source }
}

/// Write `<stem>.tmodel`, `<stem>.tprog` and `<stem>.tdata` into `dir`;
/// returns the manifest path.
pub fn write_bundle_dir(bundle: &ArtifactBundle, dir: &Path, stem: &str) -> Result<PathBuf, BundleError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = bundle.manifest.clone();
    manifest.program_file = format!("{stem}.tprog");
    manifest.constants_file = format!("{stem}.tdata");
    for (name, bytes) in [(&manifest.program_file, &bundle.program), (&manifest.constants_file, &bundle.constants)] {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(io_err(&p))?;
    }
    let p = dir.join(format!("{stem}.tmodel"));
    fs::write(&p, manifest.to_text()).map_err(io_err(&p))?;
    Ok(p)
}

/// Read a bundle given the path of its `.tmodel` manifest.
pub fn read_bundle_dir(manifest_path: &Path) -> Result<ArtifactBundle, BundleError> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest = BundleManifest::parse(&text)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read(&p).map_err(io_err(&p))
    };
    Ok(ArtifactBundle { program: read(&manifest.program_file)?, constants: read(&manifest.constants_file)?, manifest })
}
