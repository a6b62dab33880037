use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tcuflow::arch::{check_fit, estimate_resources, ArchConfig, ConfigFileError, FitVerdict, Resource, ResourceBudget};
use tcuflow::compiler::{emit, load_bundle, lower, read_bundle_dir, write_bundle_dir, BundleError};
use tcuflow::ecg::{
    add_gaussian_noise, benchmark, load_csv, smote_resample, stratified_split, write_csv, AugmentConfig, EcgError,
    NUM_CLASSES,
};
use tcuflow::nnir::{load_model, ModelFileError};
use tcuflow::quant::QTensor;
use tcuflow::tcusim::{report_format, run, ReportFormat};

#[derive(Parser)]
#[command(
    name = "tcuflow",
    version,
    about = "Compile, simulate and benchmark networks on a systolic tensor compute unit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an architecture and estimate its FPGA resource usage.
    Arch {
        /// Architecture file; defaults to the built-in PYNQ-Z1 configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Device budget file; defaults to the built-in Zynq-7000 budget.
        #[arg(long)]
        budget: Option<PathBuf>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Lower a model to a program bundle (.tmodel, .tprog, .tdata).
    Compile {
        #[arg(long)]
        model: PathBuf,
        /// Architecture file; defaults to the built-in PYNQ-Z1 configuration.
        #[arg(long)]
        arch: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// File stem; defaults to the model name.
        #[arg(long)]
        stem: Option<String>,
    },
    /// Run a bundle on one input tensor and report cycles.
    Sim {
        /// Path of the bundle's .tmodel manifest.
        #[arg(long)]
        bundle: PathBuf,
        /// Input tensor: decimal values separated by whitespace or commas.
        #[arg(long)]
        input: PathBuf,
        /// Target architecture; defaults to the one recorded in the bundle.
        #[arg(long)]
        arch: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the output tensor values here, one per line.
        #[arg(long)]
        values_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Classify beats with the compiled model and report simulated performance.
    Bench {
        #[arg(long)]
        model: PathBuf,
        /// Beat CSV (187 samples then label per row).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        arch: Option<PathBuf>,
        /// Number of leading beats to run.
        #[arg(long, default_value_t = 10)]
        beats: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prepare a beat CSV: noise, SMOTE rebalancing, stratified split.
    Data {
        #[arg(long)]
        input: PathBuf,
        /// Output CSV (the training part when splitting).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Oversample every class to the majority count.
        #[arg(long)]
        smote: bool,
        #[arg(long, default_value_t = 5)]
        smote_k: usize,
        /// Training fraction; requires --test-out.
        #[arg(long, requires = "test_out")]
        split: Option<f64>,
        #[arg(long, requires = "split")]
        test_out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

/// Exit status 1: the inputs were read but the request cannot be met.
/// Exit status 2: a file could not be read, written or parsed.
enum Failure {
    Domain(String),
    Io(String),
}

impl Failure {
    fn domain(e: impl Display) -> Self {
        Failure::Domain(e.to_string())
    }

    fn io(e: impl Display) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<ModelFileError> for Failure {
    fn from(e: ModelFileError) -> Self {
        match e {
            ModelFileError::Io { .. } => Failure::io(e),
            _ => Failure::domain(e),
        }
    }
}

impl From<BundleError> for Failure {
    fn from(e: BundleError) -> Self {
        match e {
            BundleError::Io { .. } | BundleError::Syntax(_) | BundleError::MissingKey(_) | BundleError::Format(_) => {
                Failure::io(e)
            }
            _ => Failure::domain(e),
        }
    }
}

impl From<EcgError> for Failure {
    fn from(e: EcgError) -> Self {
        match e {
            EcgError::Io { .. } | EcgError::Csv(_) => Failure::io(e),
            _ => Failure::domain(e),
        }
    }
}

fn with_path<E: Display>(path: &Path) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::io(format!("{}: {e}", path.display()))
}

fn load_arch(path: Option<&Path>) -> Result<ArchConfig, Failure> {
    match path {
        None => Ok(ArchConfig::pynq_z1()),
        Some(p) => ArchConfig::load(p).map_err(with_path::<ConfigFileError>(p)),
    }
}

fn emit_text(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(with_path(p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Serialize)]
#[serde(rename_all = "UPPERCASE")]
struct PerResource<T> {
    lut: T,
    ff: T,
    bram: T,
    io: T,
    dsp: T,
}

impl<T> PerResource<T> {
    fn from_fn(f: impl Fn(Resource) -> T) -> Self {
        Self {
            lut: f(Resource::Lut),
            ff: f(Resource::Ff),
            bram: f(Resource::Bram),
            io: f(Resource::Io),
            dsp: f(Resource::Dsp),
        }
    }
}

#[derive(Serialize)]
struct ArchReport<'a> {
    config: &'a ArchConfig,
    budget: &'a ResourceBudget,
    used: PerResource<u64>,
    pct: PerResource<f64>,
    fits: bool,
    overflow: Vec<&'static str>,
}

fn cmd_arch(config: Option<&Path>, budget: Option<&Path>, json: bool) -> Result<(), Failure> {
    let cfg = load_arch(config)?;
    let budget = match budget {
        None => ResourceBudget::zynq7000(),
        Some(p) => ResourceBudget::load(p).map_err(with_path::<ConfigFileError>(p))?,
    };
    if !budget.is_valid() {
        return Err(Failure::domain("budget: every available count must be > 0"));
    }
    let est = estimate_resources(&cfg, &budget).map_err(Failure::domain)?;
    let verdict = check_fit(&est, &budget);
    let overflow: Vec<&'static str> = match &verdict {
        FitVerdict::Fits => vec![],
        FitVerdict::Overflow(rs) => rs.iter().map(|r| r.name()).collect(),
    };
    if json {
        let rep = ArchReport {
            config: &cfg,
            budget: &budget,
            used: PerResource::from_fn(|r| est.used(r)),
            pct: PerResource::from_fn(|r| est.utilization_pct(r)),
            fits: verdict.fits(),
            overflow: overflow.clone(),
        };
        print!("{}", to_json(&rep));
    } else {
        print!("{}", est.table(&budget));
        match &verdict {
            FitVerdict::Fits => println!("fits: yes"),
            FitVerdict::Overflow(_) => println!("fits: no (over budget: {})", overflow.join(", ")),
        }
    }
    if verdict.fits() {
        Ok(())
    } else {
        Err(Failure::domain(format!("design exceeds the budget for {}", overflow.join(", "))))
    }
}

fn cmd_compile(model: &Path, arch: Option<&Path>, out: &Path, stem: Option<&str>) -> Result<(), Failure> {
    let arch = load_arch(arch)?;
    let g = load_model(model)?;
    let prog = lower(&g, &arch).map_err(Failure::domain)?;
    let bundle = emit(&prog, &g);
    let manifest = write_bundle_dir(&bundle, out, stem.unwrap_or(g.name()))?;
    println!(
        "{}: {} instructions, {} constant vectors, checksum {:08x}",
        manifest.display(),
        bundle.manifest.instructions,
        bundle.manifest.constant_vectors,
        bundle.manifest.checksum
    );
    Ok(())
}

fn read_values(path: &Path) -> Result<Vec<f64>, Failure> {
    let text = fs::read_to_string(path).map_err(with_path(path))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let v: f64 = tok
                .parse()
                .map_err(|_| Failure::io(format!("{}:{}: `{tok}` is not a number", path.display(), i + 1)))?;
            values.push(v);
        }
    }
    Ok(values)
}

struct SimArgs<'a> {
    bundle: &'a Path,
    input: &'a Path,
    arch: Option<&'a Path>,
    out: Option<&'a Path>,
    values_out: Option<&'a Path>,
    format: Format,
}

fn cmd_sim(a: SimArgs) -> Result<(), Failure> {
    let bundle = read_bundle_dir(a.bundle)?;
    let arch = match a.arch {
        Some(_) => load_arch(a.arch)?,
        None => bundle.manifest.arch.clone(),
    };
    let prog = load_bundle(&bundle, &arch)?;
    let values = read_values(a.input)?;
    let shape = prog.input.shape.clone();
    if values.len() != shape.elements() {
        return Err(Failure::domain(format!(
            "{}: {} values, bundle input {shape} needs {}",
            a.input.display(),
            values.len(),
            shape.elements()
        )));
    }
    let fmt = arch.format().map_err(Failure::domain)?;
    let x = QTensor::quantize(shape, &values, fmt).map_err(Failure::domain)?;
    let (y, rep) = run(&prog, &x).map_err(Failure::domain)?;
    if let Some(p) = a.values_out {
        let text: String = y.dequantize().iter().map(|v| format!("{v}\n")).collect();
        fs::write(p, text).map_err(with_path(p))?;
    }
    let text = match a.format {
        Format::Json => to_json(&rep),
        Format::Text => report_format(&rep, ReportFormat::Text),
    };
    emit_text(&text, a.out)
}

fn cmd_bench(
    model: &Path,
    data: &Path,
    arch: Option<&Path>,
    beats: usize,
    workers: usize,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let arch = load_arch(arch)?;
    let g = load_model(model)?;
    let ds = load_csv(data)?;
    let rep = benchmark(&g, &ds, &arch, beats, workers)?;
    emit_text(&to_json(&rep), out)
}

#[derive(Serialize)]
struct DataSummary {
    provenance: Vec<String>,
    class_counts: [usize; NUM_CLASSES],
    test_class_counts: Option<[usize; NUM_CLASSES]>,
}

struct DataArgs<'a> {
    input: &'a Path,
    out: &'a Path,
    noise_sigma: f64,
    seed: u64,
    smote: bool,
    smote_k: usize,
    split: Option<f64>,
    test_out: Option<&'a Path>,
}

fn cmd_data(a: DataArgs) -> Result<(), Failure> {
    let mut ds = load_csv(a.input)?;
    if a.noise_sigma != 0.0 {
        ds = add_gaussian_noise(&ds, &AugmentConfig { noise_sigma: a.noise_sigma, seed: a.seed })?;
    }
    if a.smote {
        ds = smote_resample(&ds, a.smote_k, a.seed)?;
    }
    let test = match (a.split, a.test_out) {
        (Some(frac), Some(test_out)) => {
            let (train, test) = stratified_split(&ds, frac, a.seed)?;
            write_csv(&test, test_out)?;
            ds = train;
            Some(test)
        }
        _ => None,
    };
    write_csv(&ds, a.out)?;
    let summary = DataSummary {
        class_counts: ds.class_counts(),
        test_class_counts: test.as_ref().map(|t| t.class_counts()),
        provenance: ds.provenance,
    };
    print!("{}", to_json(&summary));
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Arch { config, budget, json } => cmd_arch(config.as_deref(), budget.as_deref(), json),
        Command::Compile { model, arch, out, stem } => cmd_compile(&model, arch.as_deref(), &out, stem.as_deref()),
        Command::Sim { bundle, input, arch, out, values_out, format } => cmd_sim(SimArgs {
            bundle: &bundle,
            input: &input,
            arch: arch.as_deref(),
            out: out.as_deref(),
            values_out: values_out.as_deref(),
            format,
        }),
        Command::Bench { model, data, arch, beats, workers, out } => {
            cmd_bench(&model, &data, arch.as_deref(), beats, workers, out.as_deref())
        }
        Command::Data { input, out, noise_sigma, seed, smote, smote_k, split, test_out } => cmd_data(DataArgs {
            input: &input,
            out: &out,
            noise_sigma,
            seed,
            smote,
            smote_k,
            split,
            test_out: test_out.as_deref(),
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
