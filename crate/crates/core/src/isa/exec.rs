use serde::{Deserialize, Serialize};

use super::{Instruction, Opcode, Rel};
use crate::word16::{self, Dtype, Word16};

/// Executes a register-to-register operation and returns the value written
/// to `dst` together with the new flag.
///
/// Conditional forms return `a` unchanged when `flag` is false; CMP returns
/// `a` and sets the flag to the outcome of the relation. Opcodes that touch
/// memory or control flow are not ALU operations and return `(a, flag)`.
#[inline]
pub fn alu_exec(
    opcode: Opcode,
    rel: Rel,
    dtype: Dtype,
    a: Word16,
    b: Word16,
    flag: bool,
) -> (Word16, bool) {
    match opcode {
        Opcode::Add => (word16::add(dtype, a, b), flag),
        Opcode::Sub => (word16::sub(dtype, a, b), flag),
        Opcode::Mul => (word16::mul(dtype, a, b), flag),
        Opcode::AddC if flag => (word16::add(dtype, a, b), flag),
        Opcode::SubC if flag => (word16::sub(dtype, a, b), flag),
        Opcode::MulC if flag => (word16::mul(dtype, a, b), flag),
        Opcode::AddC | Opcode::SubC | Opcode::MulC => (a, flag),
        Opcode::And => (Word16(a.0 & b.0), flag),
        Opcode::Or => (Word16(a.0 | b.0), flag),
        Opcode::Xor => (Word16(a.0 ^ b.0), flag),
        Opcode::Cmp => (a, compare(rel, dtype, a, b)),
        Opcode::Mov => (b, flag),
        _ => (a, flag),
    }
}

fn compare(rel: Rel, dtype: Dtype, a: Word16, b: Word16) -> bool {
    match dtype {
        Dtype::Fp16 => {
            let (x, y) = (a.to_f32(), b.to_f32());
            match rel {
                Rel::Eq => x == y,
                Rel::Ne => x != y,
                Rel::Lt => x < y,
                Rel::Ge => x >= y,
            }
        }
        Dtype::Int16 => {
            let (x, y) = (a.to_i16(), b.to_i16());
            match rel {
                Rel::Eq => x == y,
                Rel::Ne => x != y,
                Rel::Lt => x < y,
                Rel::Ge => x >= y,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FindIdx {
    /// Compressed slot: number of set bits strictly below the axon.
    Hit(u32),
    Miss,
}

/// Looks up `axon` in a bitmap of `len` bits packed LSB-first into 16-bit
/// words. Returns `None` when the axon is outside the bitmap.
pub fn findidx<W: Copy + Into<u16>>(words: &[W], len: usize, axon: usize) -> Option<FindIdx> {
    if axon >= len || axon / 16 >= words.len() {
        return None;
    }
    let w = axon / 16;
    let b = axon % 16;
    let last: u16 = words[w].into();
    if last >> b & 1 == 0 {
        return Some(FindIdx::Miss);
    }
    let below: u32 = words[..w]
        .iter()
        .map(|&x| x.into().count_ones())
        .sum::<u32>()
        + (last & ((1u16 << b) - 1)).count_ones();
    Some(FindIdx::Hit(below))
}

/// Per-instruction cycle costs standing in for the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleCosts {
    pub default: u32,
    pub memory: u32,
    /// FINDIDX costs `ceil(axon / findidx_bits_per_cycle) + 1`.
    pub findidx_bits_per_cycle: u32,
}

impl Default for CycleCosts {
    fn default() -> Self {
        CycleCosts {
            default: 1,
            memory: 2,
            findidx_bits_per_cycle: 64,
        }
    }
}

impl CycleCosts {
    pub fn cost(&self, ins: &Instruction, axon: u16) -> u32 {
        match ins.opcode {
            Opcode::Ld | Opcode::St | Opcode::LocAcc | Opcode::Diff => self.memory,
            Opcode::FindIdx => (axon as u32).div_ceil(self.findidx_bits_per_cycle.max(1)) + 1,
            _ => self.default,
        }
    }
}
