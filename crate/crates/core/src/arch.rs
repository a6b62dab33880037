//! TCU architecture parameters, validation, and the analytical resource model.
//!
//! The resource model is affine in the number of processing elements
//! (`array_size²`) and in on-chip memory bits. Its constants were solved once
//! so that the default `pynq_z1` configuration lands exactly on the reference
//! Zynq-7000 utilization figures:
//!
//! | resource | model                                                        | default |
//! |----------|--------------------------------------------------------------|---------|
//! | DSP      | `ceil(c_dsp(width) * A²)`, `c_dsp(16) = 85/64`               | 85      |
//! | LUT      | `7979 + 150 * A²`                                            | 17579   |
//! | FF       | `8540 + 180 * A²`                                            | 20060   |
//! | BRAM     | `ceil((local + acc) * A * width / 18432) + 1302`             | 1374    |
//! | IO       | `36`                                                         | 36      |
//!
//! It is a calibrated model, not a synthesis result.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kv::{self, KvError};
use crate::quant::{FixedPointFormat, FormatError};

const LUT_BASE: u64 = 7979;
const LUT_PER_PE: u64 = 150;
const FF_BASE: u64 = 8540;
const FF_PER_PE: u64 = 180;
const BRAM_BITS_PER_UNIT: u64 = 18432;
const BRAM_BASE: u64 = 1302;
const IO_PINS: u64 = 36;

/// DSP slices per processing element as a ratio, keyed by operand width.
/// Narrow operands pack two multipliers per slice; wide ones need four.
const fn dsp_per_pe(data_width_bits: u32) -> (u64, u64) {
    if data_width_bits <= 8 {
        (85, 128)
    } else if data_width_bits <= 18 {
        (85, 64)
    } else {
        (85, 16)
    }
}

/// Hardware parameters of one TCU instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub array_size: u32,
    pub data_width_bits: u32,
    pub frac_bits: u32,
    pub local_depth: u32,
    pub acc_depth: u32,
    pub dram0_depth: u32,
    pub dram1_depth: u32,
    pub clock_mhz: f64,
    pub dram_latency_factor: u32,
    pub simd_lanes: u32,
}

pub const ARCH_KEYS: [&str; 10] = [
    "array_size",
    "data_width_bits",
    "frac_bits",
    "local_depth",
    "acc_depth",
    "dram0_depth",
    "dram1_depth",
    "clock_mhz",
    "dram_latency_factor",
    "simd_lanes",
];

impl ArchConfig {
    /// Default configuration for the PYNQ-Z1 board. The board clock is
    /// 100 MHz; the array and memory sizes are assumptions sized for a
    /// Zynq-7000 class device.
    pub fn pynq_z1() -> Self {
        Self {
            array_size: 8,
            data_width_bits: 16,
            frac_bits: 8,
            local_depth: 8192,
            acc_depth: 2048,
            dram0_depth: 1 << 20,
            dram1_depth: 1 << 20,
            clock_mhz: 100.0,
            dram_latency_factor: 4,
            simd_lanes: 8,
        }
    }

    /// Fixed-point format implied by the data path widths.
    pub fn format(&self) -> Result<FixedPointFormat, FormatError> {
        FixedPointFormat::new(self.data_width_bits, self.frac_bits)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigFileError> {
        let entries = kv::parse(text)?;
        let mut cfg = ArchConfig::pynq_z1();
        let mut seen = [false; ARCH_KEYS.len()];
        for e in &entries {
            let idx = ARCH_KEYS
                .iter()
                .position(|k| *k == e.key)
                .ok_or_else(|| ConfigFileError::UnknownKey { line: e.line, key: e.key.clone() })?;
            seen[idx] = true;
            match idx {
                0 => cfg.array_size = kv::parse_value(e)?,
                1 => cfg.data_width_bits = kv::parse_value(e)?,
                2 => cfg.frac_bits = kv::parse_value(e)?,
                3 => cfg.local_depth = kv::parse_value(e)?,
                4 => cfg.acc_depth = kv::parse_value(e)?,
                5 => cfg.dram0_depth = kv::parse_value(e)?,
                6 => cfg.dram1_depth = kv::parse_value(e)?,
                7 => cfg.clock_mhz = kv::parse_value(e)?,
                8 => cfg.dram_latency_factor = kv::parse_value(e)?,
                _ => cfg.simd_lanes = kv::parse_value(e)?,
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(ConfigFileError::MissingKey(ARCH_KEYS[i].to_string()));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigFileError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        format!(
            "# TCU architecture\n\
             array_size = {}\ndata_width_bits = {}\nfrac_bits = {}\nlocal_depth = {}\n\
             acc_depth = {}\ndram0_depth = {}\ndram1_depth = {}\nclock_mhz = {}\n\
             dram_latency_factor = {}\nsimd_lanes = {}\n",
            self.array_size,
            self.data_width_bits,
            self.frac_bits,
            self.local_depth,
            self.acc_depth,
            self.dram0_depth,
            self.dram1_depth,
            self.clock_mhz,
            self.dram_latency_factor,
            self.simd_lanes
        )
    }
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::pynq_z1()
    }
}

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error(transparent)]
    Syntax(#[from] KvError),
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One violated configuration invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Every violated invariant of `cfg`; empty means valid.
pub fn validate_arch(cfg: &ArchConfig) -> Vec<Violation> {
    let mut v = Vec::new();
    let mut push = |field, message: String| v.push(Violation { field, message });
    if cfg.array_size < 2 {
        push("array_size", format!("array_size must be >= 2 (got {})", cfg.array_size));
    }
    if cfg.data_width_bits == 0 || cfg.data_width_bits > 32 {
        push("data_width_bits", format!("data_width_bits must be in 1..=32 (got {})", cfg.data_width_bits));
    }
    if cfg.frac_bits == 0 {
        push("frac_bits", "frac_bits must be > 0".into());
    }
    if cfg.frac_bits >= cfg.data_width_bits {
        push("frac_bits", "frac_bits must be < data_width_bits".into());
    }
    for (field, depth) in [
        ("local_depth", cfg.local_depth),
        ("acc_depth", cfg.acc_depth),
        ("dram0_depth", cfg.dram0_depth),
        ("dram1_depth", cfg.dram1_depth),
    ] {
        if depth == 0 {
            push(field, format!("{field} must be > 0"));
        }
    }
    if !(cfg.clock_mhz.is_finite() && cfg.clock_mhz > 0.0) {
        push("clock_mhz", format!("clock_mhz must be a positive number (got {})", cfg.clock_mhz));
    }
    if cfg.dram_latency_factor == 0 {
        push("dram_latency_factor", "dram_latency_factor must be > 0".into());
    }
    if cfg.simd_lanes == 0 || cfg.simd_lanes != cfg.array_size {
        push("simd_lanes", format!("simd_lanes must equal array_size (got {} vs {})", cfg.simd_lanes, cfg.array_size));
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resource {
    Lut,
    Ff,
    Bram,
    Io,
    Dsp,
}

impl Resource {
    pub const ALL: [Resource; 5] = [Resource::Lut, Resource::Ff, Resource::Bram, Resource::Io, Resource::Dsp];

    pub fn name(self) -> &'static str {
        match self {
            Resource::Lut => "LUT",
            Resource::Ff => "FF",
            Resource::Bram => "BRAM",
            Resource::Io => "IO",
            Resource::Dsp => "DSP",
        }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Available resources on a device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceBudget {
    pub lut_avail: u64,
    pub ff_avail: u64,
    pub bram_avail: u64,
    pub io_avail: u64,
    pub dsp_avail: u64,
}

const BUDGET_KEYS: [&str; 5] = ["lut_avail", "ff_avail", "bram_avail", "io_avail", "dsp_avail"];

impl ResourceBudget {
    /// Zynq-7000 figures used as the reference device.
    pub fn zynq7000() -> Self {
        Self { lut_avail: 74000, ff_avail: 106400, bram_avail: 3300, io_avail: 150, dsp_avail: 160 }
    }

    pub fn get(&self, r: Resource) -> u64 {
        match r {
            Resource::Lut => self.lut_avail,
            Resource::Ff => self.ff_avail,
            Resource::Bram => self.bram_avail,
            Resource::Io => self.io_avail,
            Resource::Dsp => self.dsp_avail,
        }
    }

    pub fn is_valid(&self) -> bool {
        Resource::ALL.iter().all(|&r| self.get(r) > 0)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigFileError> {
        let mut vals = [None; 5];
        for e in kv::parse(text)? {
            let idx = BUDGET_KEYS
                .iter()
                .position(|k| *k == e.key)
                .ok_or_else(|| ConfigFileError::UnknownKey { line: e.line, key: e.key.clone() })?;
            vals[idx] = Some(kv::parse_value::<u64>(&e)?);
        }
        let get = |i: usize| vals[i].ok_or_else(|| ConfigFileError::MissingKey(BUDGET_KEYS[i].to_string()));
        Ok(Self { lut_avail: get(0)?, ff_avail: get(1)?, bram_avail: get(2)?, io_avail: get(3)?, dsp_avail: get(4)? })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigFileError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Estimated usage plus utilization in hundredths of a percent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub lut: u64,
    pub ff: u64,
    pub bram: u64,
    pub io: u64,
    pub dsp: u64,
    pct_hundredths: [u64; 5],
}

impl ResourceEstimate {
    /// Build an estimate from raw counts, computing utilization against `budget`.
    pub fn from_counts(lut: u64, ff: u64, bram: u64, io: u64, dsp: u64, budget: &ResourceBudget) -> Self {
        let mut est = Self { lut, ff, bram, io, dsp, pct_hundredths: [0; 5] };
        for (i, r) in Resource::ALL.iter().enumerate() {
            est.pct_hundredths[i] = pct_hundredths(est.used(*r), budget.get(*r));
        }
        est
    }

    pub fn used(&self, r: Resource) -> u64 {
        match r {
            Resource::Lut => self.lut,
            Resource::Ff => self.ff,
            Resource::Bram => self.bram,
            Resource::Io => self.io,
            Resource::Dsp => self.dsp,
        }
    }

    /// Utilization percent, rounded half-up to two decimals.
    pub fn utilization_pct(&self, r: Resource) -> f64 {
        self.pct_hundredths[r as usize] as f64 / 100.0
    }

    pub fn utilization_hundredths(&self, r: Resource) -> u64 {
        self.pct_hundredths[r as usize]
    }

    pub fn table(&self, budget: &ResourceBudget) -> String {
        let mut s = format!("{:<8}{:>12}{:>12}{:>16}\n", "Resource", "Utilization", "Available", "% Utilization");
        for r in Resource::ALL {
            s.push_str(&format!(
                "{:<8}{:>12}{:>12}{:>16.2}\n",
                r.name(),
                self.used(r),
                budget.get(r),
                self.utilization_pct(r)
            ));
        }
        s
    }
}

/// `round_half_up(100 * used / avail)` in hundredths, exact integer math.
fn pct_hundredths(used: u64, avail: u64) -> u64 {
    if avail == 0 {
        return u64::MAX;
    }
    let num = used as u128 * 10_000 * 2 + avail as u128;
    (num / (2 * avail as u128)) as u64
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid architecture: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct InvalidArch(pub Vec<Violation>);

/// Analytical resource estimate for `cfg` against `budget`.
pub fn estimate_resources(cfg: &ArchConfig, budget: &ResourceBudget) -> Result<ResourceEstimate, InvalidArch> {
    let violations = validate_arch(cfg);
    if !violations.is_empty() {
        return Err(InvalidArch(violations));
    }
    let a = cfg.array_size as u64;
    let pes = a * a;
    let (num, den) = dsp_per_pe(cfg.data_width_bits);
    let dsp = (pes * num).div_ceil(den);
    let lut = LUT_BASE + LUT_PER_PE * pes;
    let ff = FF_BASE + FF_PER_PE * pes;
    let mem_bits = (cfg.local_depth as u64 + cfg.acc_depth as u64) * a * cfg.data_width_bits as u64;
    let bram = mem_bits.div_ceil(BRAM_BITS_PER_UNIT) + BRAM_BASE;
    Ok(ResourceEstimate::from_counts(lut, ff, bram, IO_PINS, dsp, budget))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum FitVerdict {
    Fits,
    Overflow(Vec<Resource>),
}

impl FitVerdict {
    pub fn fits(&self) -> bool {
        matches!(self, FitVerdict::Fits)
    }
}

pub fn check_fit(est: &ResourceEstimate, budget: &ResourceBudget) -> FitVerdict {
    let over: Vec<Resource> = Resource::ALL.into_iter().filter(|&r| est.used(r) > budget.get(r)).collect();
    if over.is_empty() {
        FitVerdict::Fits
    } else {
        FitVerdict::Overflow(over)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_is_valid() {
        assert!(validate_arch(&ArchConfig::pynq_z1()).is_empty());
    }

    #[test]
    fn frac_equal_width_is_violation() {
        let cfg = ArchConfig { frac_bits: 16, ..ArchConfig::pynq_z1() };
        let v = validate_arch(&cfg);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, "frac_bits must be < data_width_bits");
    }

    #[test]
    fn zero_array_size_flags_lanes_too() {
        let cfg = ArchConfig { array_size: 0, ..ArchConfig::pynq_z1() };
        let fields: Vec<_> = validate_arch(&cfg).iter().map(|v| v.field).collect();
        assert!(fields.contains(&"array_size"));
        assert!(fields.contains(&"simd_lanes"));
    }

    #[test]
    fn default_matches_reference_table() {
        let budget = ResourceBudget::zynq7000();
        let est = estimate_resources(&ArchConfig::pynq_z1(), &budget).unwrap();
        assert_eq!((est.lut, est.ff, est.bram, est.io, est.dsp), (17579, 20060, 1374, 36, 85));
        let want = [2375u64, 1885, 4164, 2400, 5313];
        for (r, w) in Resource::ALL.iter().zip(want) {
            let got = est.utilization_hundredths(*r);
            assert!(got.abs_diff(w) <= 1, "{r}: {got} vs {w}");
        }
        assert!(check_fit(&est, &budget).fits());
    }

    #[test]
    fn doubled_budget_halves_pct() {
        let b = ResourceBudget::zynq7000();
        let b2 = ResourceBudget {
            lut_avail: 2 * b.lut_avail,
            ff_avail: 2 * b.ff_avail,
            bram_avail: 2 * b.bram_avail,
            io_avail: 2 * b.io_avail,
            dsp_avail: 2 * b.dsp_avail,
        };
        let e1 = estimate_resources(&ArchConfig::pynq_z1(), &b).unwrap();
        let e2 = estimate_resources(&ArchConfig::pynq_z1(), &b2).unwrap();
        for r in Resource::ALL {
            assert_eq!(e1.used(r), e2.used(r));
            assert!((e1.utilization_pct(r) / 2.0 - e2.utilization_pct(r)).abs() <= 0.01);
        }
        assert_eq!(e2.utilization_pct(Resource::Io), 12.0);
    }

    #[test]
    fn halved_array_dsp() {
        let cfg = ArchConfig { array_size: 4, simd_lanes: 4, ..ArchConfig::pynq_z1() };
        let est = estimate_resources(&cfg, &ResourceBudget::zynq7000()).unwrap();
        // 85/64 * 16 = 21.25, rounded up to whole slices.
        assert_eq!(est.dsp, 22);
    }

    #[test]
    fn fit_boundaries() {
        let budget = ResourceBudget::zynq7000();
        let est = ResourceEstimate::from_counts(0, 0, 0, 0, 161, &budget);
        assert_eq!(check_fit(&est, &budget), FitVerdict::Overflow(vec![Resource::Dsp]));
        let zero = ResourceEstimate::from_counts(0, 0, 0, 0, 0, &budget);
        assert!(check_fit(&zero, &budget).fits());
        let edge = ResourceEstimate::from_counts(0, 0, 0, 0, 160, &budget);
        assert!(check_fit(&edge, &budget).fits());
    }

    #[test]
    fn config_file_round_trip_and_errors() {
        let cfg = ArchConfig::pynq_z1();
        assert_eq!(ArchConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let bad = format!("{}bogus = 1\n", cfg.to_text());
        assert!(matches!(ArchConfig::parse(&bad), Err(ConfigFileError::UnknownKey { key, .. }) if key == "bogus"));
        let missing = cfg.to_text().replace("acc_depth = 2048\n", "");
        assert!(matches!(ArchConfig::parse(&missing), Err(ConfigFileError::MissingKey(k)) if k == "acc_depth"));
        let budget = "lut_avail = 1\nff_avail = 2\nbram_avail = 3\nio_avail = 4\ndsp_avail = 5\n";
        assert_eq!(ResourceBudget::parse(budget).unwrap().bram_avail, 3);
    }

    proptest! {
        #[test]
        fn dsp_strictly_monotone(a in 2u32..128, width in 2u32..=32) {
            let base = ArchConfig { data_width_bits: width, frac_bits: 1, ..ArchConfig::pynq_z1() };
            let small = ArchConfig { array_size: a, simd_lanes: a, ..base.clone() };
            let big = ArchConfig { array_size: a + 1, simd_lanes: a + 1, ..base };
            let b = ResourceBudget::zynq7000();
            prop_assert!(estimate_resources(&small, &b).unwrap().dsp < estimate_resources(&big, &b).unwrap().dsp);
        }

        #[test]
        fn bram_monotone_in_depths(l in 1u32..100_000, acc in 1u32..100_000, dl in 0u32..1000, da in 0u32..1000) {
            let b = ResourceBudget::zynq7000();
            let c1 = ArchConfig { local_depth: l, acc_depth: acc, ..ArchConfig::pynq_z1() };
            let c2 = ArchConfig { local_depth: l + dl, acc_depth: acc + da, ..ArchConfig::pynq_z1() };
            prop_assert!(estimate_resources(&c1, &b).unwrap().bram <= estimate_resources(&c2, &b).unwrap().bram);
        }

        #[test]
        fn bigger_budget_never_breaks_fit(a in 2u32..32, extra in 0u64..1000) {
            let cfg = ArchConfig { array_size: a, simd_lanes: a, ..ArchConfig::pynq_z1() };
            let b = ResourceBudget::zynq7000();
            let b2 = ResourceBudget { dsp_avail: b.dsp_avail + extra, lut_avail: b.lut_avail + extra, ..b.clone() };
            let fits1 = check_fit(&estimate_resources(&cfg, &b).unwrap(), &b).fits();
            let fits2 = check_fit(&estimate_resources(&cfg, &b2).unwrap(), &b2).fits();
            prop_assert!(!fits1 || fits2);
        }

        #[test]
        fn estimate_is_pure(a in 2u32..64) {
            let cfg = ArchConfig { array_size: a, simd_lanes: a, ..ArchConfig::pynq_z1() };
            let b = ResourceBudget::zynq7000();
            prop_assert_eq!(estimate_resources(&cfg, &b).unwrap(), estimate_resources(&cfg, &b).unwrap());
        }
    }
}
