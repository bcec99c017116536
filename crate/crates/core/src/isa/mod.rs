//! Brain-inspired instruction set.
//!
//! Every instruction is one 32-bit word:
//!
//! ```text
//!  31      26 25    24       23  20 19   16 15            0
//! +----------+-----+--------+------+------+---------------+
//! |  opcode  |dtype|uses_imm|  dst | src1 | imm16 / src2  |
//! +----------+-----+--------+------+------+---------------+
//! ```
//!
//! `dtype` is 0 for FP16 and 1 for INT16. When `uses_imm` is clear the low
//! four bits of the last field name the second source register. CMP keeps its
//! relation selector in the `dst` field, which it does not otherwise use.
//!
//! Registers R12..R15 are loaded by the core before every handler runs and
//! are read-only to programs:
//!
//! | reg | alias | contents                                   |
//! |-----|-------|--------------------------------------------|
//! | R12 | BLK   | base address of the current neuron's block |
//! | R13 | NID   | local ID of the current neuron             |
//! | R14 | AXN   | axon ID of the event (0 in FIRE)           |
//! | R15 | DAT   | payload of the event (0 in FIRE)           |
//!
//! R0 is zero at reset; programs treat it as the zero register.

mod asm;
mod exec;

pub use asm::{assemble, disassemble, AsmError, AsmErrorKind};
pub use exec::{alu_exec, findidx, CycleCosts, FindIdx};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::word16::Dtype;

pub const NUM_REGS: usize = 16;
pub const REG_BLK: u8 = 12;
pub const REG_NID: u8 = 13;
pub const REG_AXN: u8 = 14;
pub const REG_DAT: u8 = 15;

/// Axon ID marking an event whose payload is a current rather than a spike.
pub const VALUE_AXON: u16 = 0xFFFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Opcode {
    Recv,
    Send,
    FindIdx,
    LocAcc,
    Diff,
    Add,
    Sub,
    Mul,
    AddC,
    SubC,
    MulC,
    And,
    Or,
    Xor,
    Cmp,
    Mov,
    Ld,
    St,
    B,
    Bc,
}

impl Opcode {
    pub const ALL: [Opcode; 20] = [
        Opcode::Recv,
        Opcode::Send,
        Opcode::FindIdx,
        Opcode::LocAcc,
        Opcode::Diff,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::AddC,
        Opcode::SubC,
        Opcode::MulC,
        Opcode::And,
        Opcode::Or,
        Opcode::Xor,
        Opcode::Cmp,
        Opcode::Mov,
        Opcode::Ld,
        Opcode::St,
        Opcode::B,
        Opcode::Bc,
    ];

    pub fn code(self) -> u32 {
        Opcode::ALL.iter().position(|&o| o == self).unwrap() as u32
    }

    pub fn from_code(code: u32) -> Option<Opcode> {
        Opcode::ALL.get(code as usize).copied()
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Recv => "RECV",
            Opcode::Send => "SEND",
            Opcode::FindIdx => "FINDIDX",
            Opcode::LocAcc => "LOCACC",
            Opcode::Diff => "DIFF",
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::Mul => "MUL",
            Opcode::AddC => "ADDC",
            Opcode::SubC => "SUBC",
            Opcode::MulC => "MULC",
            Opcode::And => "AND",
            Opcode::Or => "OR",
            Opcode::Xor => "XOR",
            Opcode::Cmp => "CMP",
            Opcode::Mov => "MOV",
            Opcode::Ld => "LD",
            Opcode::St => "ST",
            Opcode::B => "B",
            Opcode::Bc => "BC",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        Opcode::ALL.iter().copied().find(|o| o.mnemonic() == s)
    }

    /// True for the opcodes that address data memory as `[base + offset]`.
    pub fn is_memory(self) -> bool {
        matches!(
            self,
            Opcode::FindIdx | Opcode::LocAcc | Opcode::Diff | Opcode::Ld | Opcode::St
        )
    }

    pub fn is_conditional(self) -> bool {
        matches!(self, Opcode::AddC | Opcode::SubC | Opcode::MulC)
    }

    /// Whether the instruction writes its `dst` register.
    pub fn writes_dst(self) -> bool {
        matches!(
            self,
            Opcode::FindIdx
                | Opcode::Diff
                | Opcode::Add
                | Opcode::Sub
                | Opcode::Mul
                | Opcode::AddC
                | Opcode::SubC
                | Opcode::MulC
                | Opcode::And
                | Opcode::Or
                | Opcode::Xor
                | Opcode::Mov
                | Opcode::Ld
        )
    }
}

/// Relation tested by CMP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rel {
    Eq,
    Ne,
    Lt,
    Ge,
}

impl Rel {
    pub fn code(self) -> u8 {
        match self {
            Rel::Eq => 0,
            Rel::Ne => 1,
            Rel::Lt => 2,
            Rel::Ge => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Rel> {
        match c {
            0 => Some(Rel::Eq),
            1 => Some(Rel::Ne),
            2 => Some(Rel::Lt),
            3 => Some(Rel::Ge),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Rel::Eq => "EQ",
            Rel::Ne => "NE",
            Rel::Lt => "LT",
            Rel::Ge => "GE",
        }
    }
}

/// Second operand: a register or a 16-bit immediate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Reg(u8),
    Imm(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub opcode: Opcode,
    pub dtype: Dtype,
    pub dst: u8,
    pub src1: u8,
    pub src2: Operand,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unknown opcode {0} in word {1:#010x}")]
    UnknownOpcode(u32, u32),
    #[error("invalid CMP relation {0}")]
    BadRelation(u8),
}

impl Instruction {
    pub fn new(opcode: Opcode, dtype: Dtype, dst: u8, src1: u8, src2: Operand) -> Self {
        Instruction {
            opcode,
            dtype,
            dst,
            src1,
            src2,
        }
    }

    pub fn uses_imm(&self) -> bool {
        matches!(self.src2, Operand::Imm(_))
    }

    /// CMP relation; only meaningful for CMP.
    pub fn rel(&self) -> Rel {
        Rel::from_code(self.dst).unwrap_or(Rel::Eq)
    }

    pub fn encode(&self) -> u32 {
        let (uses_imm, low) = match self.src2 {
            Operand::Reg(r) => (0u32, r as u32 & 0xF),
            Operand::Imm(v) => (1u32, v as u32),
        };
        (self.opcode.code() << 26)
            | (self.dtype.bit() << 25)
            | (uses_imm << 24)
            | ((self.dst as u32 & 0xF) << 20)
            | ((self.src1 as u32 & 0xF) << 16)
            | low
    }

    pub fn decode(word: u32) -> Result<Instruction, DecodeError> {
        let opcode =
            Opcode::from_code(word >> 26).ok_or(DecodeError::UnknownOpcode(word >> 26, word))?;
        let dtype = Dtype::from_bit(word >> 25);
        let dst = ((word >> 20) & 0xF) as u8;
        let src1 = ((word >> 16) & 0xF) as u8;
        let src2 = if (word >> 24) & 1 == 1 {
            Operand::Imm((word & 0xFFFF) as u16)
        } else {
            Operand::Reg((word & 0xF) as u8)
        };
        if opcode == Opcode::Cmp && Rel::from_code(dst).is_none() {
            return Err(DecodeError::BadRelation(dst));
        }
        Ok(Instruction {
            opcode,
            dtype,
            dst,
            src1,
            src2,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Segment {
    Integ,
    Fire,
}

/// An assembled program: an INTEG segment entered on every input event and a
/// FIRE segment run once per hosted neuron.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Program {
    pub integ: Vec<Instruction>,
    pub fire: Vec<Instruction>,
    /// label -> (segment, offset)
    pub labels: BTreeMap<String, (Segment, usize)>,
    /// Words per neuron data block.
    pub stride: u16,
    /// Named offsets of neuron variables inside a block.
    pub vars: BTreeMap<String, u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("INTEG segment has no RECV")]
    NoRecv,
    #[error("{0:?} branch at offset {1} targets {2}, outside the segment")]
    BadTarget(Segment, usize, u16),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("program image truncated")]
    Truncated,
}

impl Program {
    pub fn segment(&self, seg: Segment) -> &[Instruction] {
        match seg {
            Segment::Integ => &self.integ,
            Segment::Fire => &self.fire,
        }
    }

    /// Offset of the first instruction after the first RECV, where event
    /// handling starts.
    pub fn integ_entry(&self) -> Option<usize> {
        self.integ
            .iter()
            .position(|i| i.opcode == Opcode::Recv)
            .map(|p| p + 1)
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        if self.integ_entry().is_none() {
            return Err(ProgramError::NoRecv);
        }
        for seg in [Segment::Integ, Segment::Fire] {
            let code = self.segment(seg);
            for (pc, ins) in code.iter().enumerate() {
                if matches!(ins.opcode, Opcode::B | Opcode::Bc) {
                    if let Operand::Imm(t) = ins.src2 {
                        if t as usize >= code.len() {
                            return Err(ProgramError::BadTarget(seg, pc, t));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Binary image: `[integ_len, fire_len, stride, var_count, (name_hash, offset)*]`
    /// is carried separately by the artifact; this returns the instruction
    /// words only, INTEG then FIRE.
    pub fn encode_words(&self) -> Vec<u32> {
        self.integ
            .iter()
            .chain(self.fire.iter())
            .map(Instruction::encode)
            .collect()
    }

    /// Program memory image as 16-bit words:
    /// `integ_len, fire_len, stride, (lo, hi) per instruction`.
    pub fn to_image(&self) -> Vec<u16> {
        let mut out = vec![self.integ.len() as u16, self.fire.len() as u16, self.stride];
        for w in self.encode_words() {
            out.push(w as u16);
            out.push((w >> 16) as u16);
        }
        out
    }

    pub fn from_image(img: &[u16]) -> Result<Program, ProgramError> {
        if img.len() < 3 {
            return Err(ProgramError::Truncated);
        }
        let n_integ = img[0] as usize;
        let n_fire = img[1] as usize;
        let stride = img[2];
        let need = 3 + 2 * (n_integ + n_fire);
        if img.len() < need {
            return Err(ProgramError::Truncated);
        }
        let mut ins = Vec::with_capacity(n_integ + n_fire);
        for k in 0..n_integ + n_fire {
            let lo = img[3 + 2 * k] as u32;
            let hi = img[4 + 2 * k] as u32;
            ins.push(Instruction::decode(lo | (hi << 16))?);
        }
        let fire = ins.split_off(n_integ);
        Ok(Program {
            integ: ins,
            fire,
            labels: BTreeMap::new(),
            stride,
            vars: BTreeMap::new(),
        })
    }

    /// Instruction-level equality (what the hardware sees).
    pub fn same_code(&self, other: &Program) -> bool {
        self.integ == other.integ && self.fire == other.fire && self.stride == other.stride
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_all_opcodes() {
        for op in Opcode::ALL {
            let i = Instruction::new(op, Dtype::Int16, 3, 7, Operand::Imm(0xBEEF));
            let i = if op == Opcode::Cmp {
                Instruction {
                    dst: Rel::Ge.code(),
                    ..i
                }
            } else {
                i
            };
            assert_eq!(Instruction::decode(i.encode()).unwrap(), i);
            let r = Instruction::new(op, Dtype::Fp16, 1, 2, Operand::Reg(9));
            let r = if op == Opcode::Cmp {
                Instruction { dst: 0, ..r }
            } else {
                r
            };
            assert_eq!(Instruction::decode(r.encode()).unwrap(), r);
        }
    }

    #[test]
    fn field_layout() {
        let i = Instruction::new(Opcode::Mov, Dtype::Fp16, 1, 0, Operand::Imm(0x3C00));
        let w = i.encode();
        assert_eq!(w >> 26, Opcode::Mov.code());
        assert_eq!((w >> 25) & 1, 0);
        assert_eq!((w >> 24) & 1, 1);
        assert_eq!((w >> 20) & 0xF, 1);
        assert_eq!(w & 0xFFFF, 0x3C00);
    }

    #[test]
    fn unknown_opcode_rejected() {
        assert!(Instruction::decode(63 << 26).is_err());
    }
}
