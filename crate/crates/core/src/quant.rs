//! Fixed-point arithmetic shared by the quantized reference executor, the
//! compiler and the simulator.
//!
//! Values are stored as two's-complement integers with an implicit binary
//! point `frac_bits` from the right. Products of two storage values land in a
//! wider accumulator at twice the fractional scale; [`FixedPointFormat::rescale`]
//! brings them back. Every conversion rounds half to even and saturates at the
//! bounds of the target width, so results are reproducible bit for bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nnir::TensorShape;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("frac_bits ({frac}) must be in 1..{total}")]
    FracBits { frac: u32, total: u32 },
    #[error("total_bits ({0}) must be in 2..=32")]
    TotalBits(u32),
    #[error("acc_bits ({acc}) must be in {min}..=64")]
    AccBits { acc: u32, min: u32 },
}

/// Storage and accumulator widths plus the binary point position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedPointFormat {
    total_bits: u32,
    frac_bits: u32,
    acc_bits: u32,
}

impl FixedPointFormat {
    /// Format with the default accumulator width: three times the storage
    /// width, capped at 64 bits (48 for 16-bit storage).
    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self, FormatError> {
        Self::with_acc_bits(total_bits, frac_bits, (3 * total_bits).min(64))
    }

    pub fn with_acc_bits(total_bits: u32, frac_bits: u32, acc_bits: u32) -> Result<Self, FormatError> {
        if !(2..=32).contains(&total_bits) {
            return Err(FormatError::TotalBits(total_bits));
        }
        if frac_bits == 0 || frac_bits >= total_bits {
            return Err(FormatError::FracBits { frac: frac_bits, total: total_bits });
        }
        if acc_bits < 2 * total_bits || acc_bits > 64 {
            return Err(FormatError::AccBits { acc: acc_bits, min: 2 * total_bits });
        }
        Ok(Self { total_bits, frac_bits, acc_bits })
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn acc_bits(&self) -> u32 {
        self.acc_bits
    }

    pub fn storage_min(&self) -> i32 {
        (-(1i64 << (self.total_bits - 1))) as i32
    }

    pub fn storage_max(&self) -> i32 {
        ((1i64 << (self.total_bits - 1)) - 1) as i32
    }

    pub fn acc_min(&self) -> i64 {
        (-(1i128 << (self.acc_bits - 1))) as i64
    }

    pub fn acc_max(&self) -> i64 {
        ((1i128 << (self.acc_bits - 1)) - 1) as i64
    }

    /// Bytes per stored value in serialized constant streams.
    pub fn storage_bytes(&self) -> usize {
        self.total_bits.div_ceil(8) as usize
    }

    /// Raw encoding of 1.0, if the format can represent it.
    pub fn one_raw(&self) -> Option<i32> {
        let one = 1i64 << self.frac_bits;
        (one <= self.storage_max() as i64).then_some(one as i32)
    }

    /// `clamp(round_half_even(x * 2^frac_bits))`. NaN maps to zero.
    pub fn quantize(&self, x: f64) -> i32 {
        if x.is_nan() {
            return 0;
        }
        let scaled = (x * (1u64 << self.frac_bits) as f64).round_ties_even();
        scaled.clamp(self.storage_min() as f64, self.storage_max() as f64) as i32
    }

    pub fn dequantize(&self, raw: i32) -> f64 {
        raw as f64 / (1u64 << self.frac_bits) as f64
    }

    /// `acc + a * b` at accumulator width, saturating.
    #[inline]
    pub fn mac_acc(&self, acc: i64, a: i32, b: i32) -> i64 {
        self.saturate_acc(acc as i128 + (a as i64 * b as i64) as i128)
    }

    /// Saturating accumulator addition.
    #[inline]
    pub fn add_acc(&self, a: i64, b: i64) -> i64 {
        self.saturate_acc(a as i128 + b as i128)
    }

    #[inline]
    pub fn saturate_acc(&self, v: i128) -> i64 {
        v.clamp(self.acc_min() as i128, self.acc_max() as i128) as i64
    }

    #[inline]
    pub fn saturate_storage(&self, v: i64) -> i32 {
        v.clamp(self.storage_min() as i64, self.storage_max() as i64) as i32
    }

    /// Lift a storage value onto the accumulator scale (`raw << frac_bits`).
    #[inline]
    pub fn widen(&self, raw: i32) -> i64 {
        self.saturate_acc((raw as i128) << self.frac_bits)
    }

    /// Shift an accumulator value right by `frac_bits`, rounding half to
    /// even, then saturate to storage width.
    #[inline]
    pub fn rescale(&self, acc: i64) -> i32 {
        let f = self.frac_bits;
        let floor = acc >> f;
        let rem = acc - (floor << f);
        let half = 1i64 << (f - 1);
        let q = if rem > half || (rem == half && floor & 1 == 1) { floor + 1 } else { floor };
        self.saturate_storage(q)
    }
}

impl Default for FixedPointFormat {
    fn default() -> Self {
        Self { total_bits: 16, frac_bits: 8, acc_bits: 48 }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QTensorError {
    #[error("raw length {got} does not match shape element count {want}")]
    Length { got: usize, want: usize },
    #[error("raw value {value} at index {index} outside the storage range")]
    Range { index: usize, value: i32 },
}

/// Tensor of fixed-point storage values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QTensor {
    shape: TensorShape,
    raw: Vec<i32>,
    format: FixedPointFormat,
}

impl QTensor {
    pub fn new(shape: TensorShape, raw: Vec<i32>, format: FixedPointFormat) -> Result<Self, QTensorError> {
        if raw.len() != shape.elements() {
            return Err(QTensorError::Length { got: raw.len(), want: shape.elements() });
        }
        if let Some((index, &value)) =
            raw.iter().enumerate().find(|(_, &v)| v < format.storage_min() || v > format.storage_max())
        {
            return Err(QTensorError::Range { index, value });
        }
        Ok(Self { shape, raw, format })
    }

    pub fn quantize(shape: TensorShape, values: &[f64], format: FixedPointFormat) -> Result<Self, QTensorError> {
        Self::new(shape, values.iter().map(|&x| format.quantize(x)).collect(), format)
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn raw(&self) -> &[i32] {
        &self.raw
    }

    pub fn format(&self) -> FixedPointFormat {
        self.format
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.raw.iter().map(|&r| self.format.dequantize(r)).collect()
    }

    pub fn into_raw(self) -> Vec<i32> {
        self.raw
    }
}
