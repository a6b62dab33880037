//! TCU instruction set and its fixed-width binary encoding.
//!
//! Every instruction is a 16-byte record:
//!
//! | bytes  | field                                   |
//! |--------|-----------------------------------------|
//! | 0      | opcode                                  |
//! | 1      | flags                                   |
//! | 2..6   | operand 0 (u32 LE)                      |
//! | 6..10  | operand 1 (u32 LE)                      |
//! | 10..14 | operand 2 (u32 LE)                      |
//! | 14..16 | SIMD vector count (u16 LE), else zero   |

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INSTRUCTION_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Dram0,
    Dram1,
    Local,
    Acc,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::Dram0, Region::Dram1, Region::Local, Region::Acc];

    pub fn name(self) -> &'static str {
        match self {
            Region::Dram0 => "dram0",
            Region::Dram1 => "dram1",
            Region::Local => "local",
            Region::Acc => "acc",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Dram0ToLocal,
    Dram1ToLocal,
    LocalToDram1,
    AccToLocal,
    LocalToAcc,
}

impl Direction {
    const ALL: [Direction; 5] = [
        Direction::Dram0ToLocal,
        Direction::Dram1ToLocal,
        Direction::LocalToDram1,
        Direction::AccToLocal,
        Direction::LocalToAcc,
    ];

    pub fn source(self) -> Region {
        match self {
            Direction::Dram0ToLocal => Region::Dram0,
            Direction::Dram1ToLocal => Region::Dram1,
            Direction::LocalToDram1 | Direction::LocalToAcc => Region::Local,
            Direction::AccToLocal => Region::Acc,
        }
    }

    pub fn dest(self) -> Region {
        match self {
            Direction::LocalToDram1 => Region::Dram1,
            Direction::LocalToAcc => Region::Acc,
            _ => Region::Local,
        }
    }

    pub fn touches_dram(self) -> bool {
        matches!(self.source(), Region::Dram0 | Region::Dram1) || self.dest() == Region::Dram1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimdOp {
    /// `max(a, 0)` per lane.
    ReluMax0,
    /// `a + b` per lane, saturating.
    Add,
    /// Copy `a`.
    Move,
    /// `max(a, b)` per lane.
    Max,
}

impl SimdOp {
    const ALL: [SimdOp; 4] = [SimdOp::ReluMax0, SimdOp::Add, SimdOp::Move, SimdOp::Max];

    pub fn needs_b(self) -> bool {
        matches!(self, SimdOp::Add | SimdOp::Max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TcuInstruction {
    NoOp,
    /// Shift `row_count` rows from local memory into the weight tile; each
    /// pushed row enters at the bottom and the top row drops out.
    LoadWeights {
        local_addr: u32,
        row_count: u32,
    },
    /// For each of `row_count` rows: `acc[acc_addr+r] (+)= Wᵀ · local[local_in+r]`.
    MatMul {
        local_in: u32,
        acc_addr: u32,
        row_count: u32,
        accumulate: bool,
        zero_weights: bool,
    },
    DataMove {
        direction: Direction,
        src: u32,
        dst: u32,
        count: u32,
    },
    /// Lane-wise op over `count` accumulator vectors. With `broadcast_b` the
    /// same `b` vector is used for every row.
    Simd {
        op: SimdOp,
        a: u32,
        b: Option<u32>,
        broadcast_b: bool,
        dst: u32,
        count: u16,
    },
}

/// Instruction classes used for per-class tallies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InstrClass {
    NoOp,
    LoadWeights,
    MatMul,
    DataMove,
    Simd,
}

impl InstrClass {
    pub const ALL: [InstrClass; 5] =
        [InstrClass::NoOp, InstrClass::LoadWeights, InstrClass::MatMul, InstrClass::DataMove, InstrClass::Simd];

    pub fn name(self) -> &'static str {
        match self {
            InstrClass::NoOp => "NoOp",
            InstrClass::LoadWeights => "LoadWeights",
            InstrClass::MatMul => "MatMul",
            InstrClass::DataMove => "DataMove",
            InstrClass::Simd => "SIMD",
        }
    }
}

mod opcode {
    pub const NOOP: u8 = 0;
    pub const MATMUL: u8 = 1;
    pub const DATA_MOVE: u8 = 2;
    pub const LOAD_WEIGHTS: u8 = 3;
    pub const SIMD: u8 = 4;
}

const MATMUL_ACCUMULATE: u8 = 0x01;
const MATMUL_ZERO_WEIGHTS: u8 = 0x02;
const SIMD_HAS_B: u8 = 0x08;
const SIMD_BROADCAST_B: u8 = 0x10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("instruction {index}: unknown opcode {opcode:#04x}")]
    Opcode { index: usize, opcode: u8 },
    #[error("instruction {index}: invalid flags {flags:#04x}")]
    Flags { index: usize, flags: u8 },
    #[error("instruction {index}: reserved bytes must be zero")]
    Reserved { index: usize },
    #[error("program length {0} is not a multiple of {INSTRUCTION_BYTES}")]
    Length(usize),
}

impl TcuInstruction {
    pub fn class(&self) -> InstrClass {
        match self {
            TcuInstruction::NoOp => InstrClass::NoOp,
            TcuInstruction::LoadWeights { .. } => InstrClass::LoadWeights,
            TcuInstruction::MatMul { .. } => InstrClass::MatMul,
            TcuInstruction::DataMove { .. } => InstrClass::DataMove,
            TcuInstruction::Simd { .. } => InstrClass::Simd,
        }
    }

    pub fn encode(&self) -> [u8; INSTRUCTION_BYTES] {
        let (op, flags, o, extra): (u8, u8, [u32; 3], u16) = match *self {
            TcuInstruction::NoOp => (opcode::NOOP, 0, [0; 3], 0),
            TcuInstruction::LoadWeights { local_addr, row_count } => {
                (opcode::LOAD_WEIGHTS, 0, [local_addr, row_count, 0], 0)
            }
            TcuInstruction::MatMul { local_in, acc_addr, row_count, accumulate, zero_weights } => {
                let mut f = 0;
                if accumulate {
                    f |= MATMUL_ACCUMULATE;
                }
                if zero_weights {
                    f |= MATMUL_ZERO_WEIGHTS;
                }
                (opcode::MATMUL, f, [local_in, acc_addr, row_count], 0)
            }
            TcuInstruction::DataMove { direction, src, dst, count } => {
                let d = Direction::ALL.iter().position(|x| *x == direction).unwrap() as u8;
                (opcode::DATA_MOVE, d, [src, dst, count], 0)
            }
            TcuInstruction::Simd { op, a, b, broadcast_b, dst, count } => {
                let mut f = SimdOp::ALL.iter().position(|x| *x == op).unwrap() as u8;
                if b.is_some() {
                    f |= SIMD_HAS_B;
                }
                if broadcast_b {
                    f |= SIMD_BROADCAST_B;
                }
                (opcode::SIMD, f, [a, b.unwrap_or(0), dst], count)
            }
        };
        let mut out = [0u8; INSTRUCTION_BYTES];
        out[0] = op;
        out[1] = flags;
        for (i, v) in o.iter().enumerate() {
            out[2 + 4 * i..6 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        out[14..16].copy_from_slice(&extra.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8; INSTRUCTION_BYTES], index: usize) -> Result<Self, DecodeError> {
        let word = |i: usize| u32::from_le_bytes(bytes[2 + 4 * i..6 + 4 * i].try_into().unwrap());
        let extra = u16::from_le_bytes([bytes[14], bytes[15]]);
        let flags = bytes[1];
        let bad_flags = DecodeError::Flags { index, flags };
        let plain = |instr: TcuInstruction, flag_mask: u8| {
            if flags & !flag_mask != 0 {
                Err(bad_flags.clone())
            } else if extra != 0 {
                Err(DecodeError::Reserved { index })
            } else {
                Ok(instr)
            }
        };
        match bytes[0] {
            opcode::NOOP => {
                if bytes[2..].iter().any(|&b| b != 0) {
                    return Err(DecodeError::Reserved { index });
                }
                plain(TcuInstruction::NoOp, 0)
            }
            opcode::LOAD_WEIGHTS => {
                if word(2) != 0 {
                    return Err(DecodeError::Reserved { index });
                }
                plain(TcuInstruction::LoadWeights { local_addr: word(0), row_count: word(1) }, 0)
            }
            opcode::MATMUL => plain(
                TcuInstruction::MatMul {
                    local_in: word(0),
                    acc_addr: word(1),
                    row_count: word(2),
                    accumulate: flags & MATMUL_ACCUMULATE != 0,
                    zero_weights: flags & MATMUL_ZERO_WEIGHTS != 0,
                },
                MATMUL_ACCUMULATE | MATMUL_ZERO_WEIGHTS,
            ),
            opcode::DATA_MOVE => {
                let direction = *Direction::ALL.get(flags as usize).ok_or(bad_flags.clone())?;
                plain(TcuInstruction::DataMove { direction, src: word(0), dst: word(1), count: word(2) }, 0x07)
            }
            opcode::SIMD => {
                if flags & !(0x07 | SIMD_HAS_B | SIMD_BROADCAST_B) != 0 {
                    return Err(bad_flags.clone());
                }
                let op = *SimdOp::ALL.get((flags & 0x07) as usize).ok_or(bad_flags.clone())?;
                let has_b = flags & SIMD_HAS_B != 0;
                if !has_b && word(1) != 0 {
                    return Err(DecodeError::Reserved { index });
                }
                Ok(TcuInstruction::Simd {
                    op,
                    a: word(0),
                    b: has_b.then(|| word(1)),
                    broadcast_b: flags & SIMD_BROADCAST_B != 0,
                    dst: word(2),
                    count: extra,
                })
            }
            opcode => Err(DecodeError::Opcode { index, opcode }),
        }
    }
}

pub fn encode_program(instrs: &[TcuInstruction]) -> Vec<u8> {
    instrs.iter().flat_map(|i| i.encode()).collect()
}

pub fn decode_program(bytes: &[u8]) -> Result<Vec<TcuInstruction>, DecodeError> {
    if !bytes.len().is_multiple_of(INSTRUCTION_BYTES) {
        return Err(DecodeError::Length(bytes.len()));
    }
    bytes
        .chunks_exact(INSTRUCTION_BYTES)
        .enumerate()
        .map(|(i, c)| TcuInstruction::decode(c.try_into().unwrap(), i))
        .collect()
}

impl fmt::Display for TcuInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TcuInstruction::NoOp => write!(f, "NoOp"),
            TcuInstruction::LoadWeights { local_addr, row_count } => {
                write!(f, "LoadWeights local[{local_addr}] x{row_count}")
            }
            TcuInstruction::MatMul { local_in, acc_addr, row_count, accumulate, zero_weights } => write!(
                f,
                "MatMul local[{local_in}] -> acc[{acc_addr}] x{row_count}{}{}",
                if *accumulate { " acc" } else { "" },
                if *zero_weights { " zero" } else { "" }
            ),
            TcuInstruction::DataMove { direction, src, dst, count } => {
                write!(f, "DataMove {}[{src}] -> {}[{dst}] x{count}", direction.source(), direction.dest())
            }
            TcuInstruction::Simd { op, a, b, broadcast_b, dst, count } => {
                write!(f, "SIMD {op:?} acc[{a}]")?;
                if let Some(b) = b {
                    write!(f, ", acc[{b}]{}", if *broadcast_b { " (bcast)" } else { "" })?;
                }
                write!(f, " -> acc[{dst}] x{count}")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_instr() -> impl Strategy<Value = TcuInstruction> {
        let dir = prop::sample::select(Direction::ALL.to_vec());
        let op = prop::sample::select(SimdOp::ALL.to_vec());
        prop_oneof![
            Just(TcuInstruction::NoOp),
            (any::<u32>(), any::<u32>()).prop_map(|(a, r)| TcuInstruction::LoadWeights { local_addr: a, row_count: r }),
            (any::<u32>(), any::<u32>(), any::<u32>(), any::<bool>(), any::<bool>()).prop_map(|(l, a, r, acc, z)| {
                TcuInstruction::MatMul { local_in: l, acc_addr: a, row_count: r, accumulate: acc, zero_weights: z }
            }),
            (dir, any::<u32>(), any::<u32>(), any::<u32>())
                .prop_map(|(direction, src, dst, count)| TcuInstruction::DataMove { direction, src, dst, count }),
            (op, any::<u32>(), prop::option::of(any::<u32>()), any::<bool>(), any::<u32>(), any::<u16>()).prop_map(
                |(op, a, b, broadcast_b, dst, count)| TcuInstruction::Simd { op, a, b, broadcast_b, dst, count }
            ),
        ]
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(instrs in prop::collection::vec(arb_instr(), 0..50)) {
            let bytes = encode_program(&instrs);
            prop_assert_eq!(bytes.len(), instrs.len() * INSTRUCTION_BYTES);
            prop_assert_eq!(decode_program(&bytes).unwrap(), instrs);
        }
    }

    #[test]
    fn layout_is_fixed() {
        let i = TcuInstruction::DataMove { direction: Direction::LocalToDram1, src: 1, dst: 0x0203, count: 7 };
        assert_eq!(i.encode(), [2, 2, 1, 0, 0, 0, 3, 2, 0, 0, 7, 0, 0, 0, 0, 0]);
        let s = TcuInstruction::Simd { op: SimdOp::Add, a: 0, b: Some(4), broadcast_b: true, dst: 0, count: 300 };
        assert_eq!(s.encode(), [4, 0x19, 0, 0, 0, 0, 4, 0, 0, 0, 0, 0, 0, 0, 44, 1]);
    }

    #[test]
    fn rejects_garbage() {
        let mut b = [0u8; 16];
        b[0] = 9;
        assert!(matches!(TcuInstruction::decode(&b, 3), Err(DecodeError::Opcode { index: 3, opcode: 9 })));
        b[0] = opcode::DATA_MOVE;
        b[1] = 5;
        assert!(matches!(TcuInstruction::decode(&b, 0), Err(DecodeError::Flags { .. })));
        b[1] = 0;
        b[15] = 1;
        assert!(matches!(TcuInstruction::decode(&b, 0), Err(DecodeError::Reserved { .. })));
        assert!(matches!(decode_program(&[0u8; 17]), Err(DecodeError::Length(17))));
    }
}
