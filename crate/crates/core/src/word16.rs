//! 16-bit datum shared by the ISA, memories and packets.
//!
//! A [`Word16`] is just a bit pattern. Whether it is read as IEEE-754
//! binary16 or as a two's-complement integer depends on the instruction
//! that consumes it ([`Dtype`]).

use std::fmt;

use half::f16;
use serde::{Deserialize, Serialize};

/// Operand interpretation selected by the instruction's dtype bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dtype {
    Fp16,
    Int16,
}

impl Dtype {
    pub fn bit(self) -> u32 {
        match self {
            Dtype::Fp16 => 0,
            Dtype::Int16 => 1,
        }
    }

    pub fn from_bit(bit: u32) -> Self {
        if bit & 1 == 0 {
            Dtype::Fp16
        } else {
            Dtype::Int16
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Word16(pub u16);

impl Word16 {
    pub const ZERO: Word16 = Word16(0);
    pub const FP_ONE: Word16 = Word16(0x3C00);

    #[inline]
    pub fn bits(self) -> u16 {
        self.0
    }

    #[inline]
    pub fn from_f16(v: f16) -> Self {
        Word16(v.to_bits())
    }

    #[inline]
    pub fn to_f16(self) -> f16 {
        f16::from_bits(self.0)
    }

    /// Rounds an `f32` to the nearest binary16 (ties to even).
    #[inline]
    pub fn from_f32(v: f32) -> Self {
        Word16::from_f16(f16::from_f32(v))
    }

    /// Rounds an `f64` to the nearest binary16 (ties to even), single rounding.
    #[inline]
    pub fn from_f64(v: f64) -> Self {
        Word16::from_f16(f16::from_f64(v))
    }

    #[inline]
    pub fn to_f32(self) -> f32 {
        self.to_f16().to_f32()
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.to_f16().to_f64()
    }

    #[inline]
    pub fn from_i16(v: i16) -> Self {
        Word16(v as u16)
    }

    #[inline]
    pub fn to_i16(self) -> i16 {
        self.0 as i16
    }

    pub fn is_nan(self) -> bool {
        self.to_f16().is_nan()
    }

    pub fn is_finite_fp(self) -> bool {
        self.to_f16().is_finite()
    }
}

impl fmt::Debug for Word16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Word16({:#06x}={})", self.0, self.to_f32())
    }
}

impl fmt::Display for Word16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#06x}", self.0)
    }
}

impl From<u16> for Word16 {
    fn from(v: u16) -> Self {
        Word16(v)
    }
}

impl From<Word16> for u16 {
    fn from(w: Word16) -> Self {
        w.0
    }
}

// Binary16 arithmetic. Products of two 11-bit significands are exact in f32
// and f32 carries more than 2*11+2 bits, so computing in f32 and rounding
// once to binary16 gives the correctly rounded result for add, sub and mul.

#[inline]
pub fn fp_add(a: Word16, b: Word16) -> Word16 {
    Word16::from_f32(a.to_f32() + b.to_f32())
}

#[inline]
pub fn fp_sub(a: Word16, b: Word16) -> Word16 {
    Word16::from_f32(a.to_f32() - b.to_f32())
}

#[inline]
pub fn fp_mul(a: Word16, b: Word16) -> Word16 {
    Word16::from_f32(a.to_f32() * b.to_f32())
}

#[inline]
pub fn int_add(a: Word16, b: Word16) -> Word16 {
    Word16(a.0.wrapping_add(b.0))
}

#[inline]
pub fn int_sub(a: Word16, b: Word16) -> Word16 {
    Word16(a.0.wrapping_sub(b.0))
}

#[inline]
pub fn int_mul(a: Word16, b: Word16) -> Word16 {
    Word16(a.0.wrapping_mul(b.0))
}

#[inline]
pub fn add(dtype: Dtype, a: Word16, b: Word16) -> Word16 {
    match dtype {
        Dtype::Fp16 => fp_add(a, b),
        Dtype::Int16 => int_add(a, b),
    }
}

pub fn sub(dtype: Dtype, a: Word16, b: Word16) -> Word16 {
    match dtype {
        Dtype::Fp16 => fp_sub(a, b),
        Dtype::Int16 => int_sub(a, b),
    }
}

pub fn mul(dtype: Dtype, a: Word16, b: Word16) -> Word16 {
    match dtype {
        Dtype::Fp16 => fp_mul(a, b),
        Dtype::Int16 => int_mul(a, b),
    }
}

/// `round(round(tau * v) + c)`: two roundings, never fused.
#[inline]
pub fn diff_step(v: Word16, tau: Word16, c: Word16) -> Word16 {
    fp_add(fp_mul(tau, v), c)
}

/// Next representable binary16 value above (`up`) or below `w`.
/// Infinities and NaN are returned unchanged.
pub fn fp_next(w: Word16, up: bool) -> Word16 {
    let f = w.to_f16();
    if !f.is_finite() {
        return w;
    }
    let bits = w.0;
    let neg = bits & 0x8000 != 0;
    let mag = bits & 0x7FFF;
    if mag == 0 {
        return if up { Word16(0x0001) } else { Word16(0x8001) };
    }
    let away_from_zero = up != neg;
    let mag = if away_from_zero { mag + 1 } else { mag - 1 };
    Word16((bits & 0x8000) | mag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_encodes_as_3c00() {
        assert_eq!(Word16::from_f32(1.0), Word16(0x3C00));
    }

    #[test]
    fn fp_add_exact() {
        let r = fp_add(Word16::from_f32(1.5), Word16::from_f32(2.25));
        assert_eq!(r.to_f32(), 3.75);
    }

    #[test]
    fn int_add_wraps() {
        assert_eq!(int_add(Word16(0x7FFF), Word16(1)), Word16(0x8000));
    }

    #[test]
    fn diff_examples() {
        let w = Word16::from_f32;
        assert_eq!(diff_step(w(4.0), w(0.5), w(0.0)).to_f32(), 2.0);
        assert_eq!(diff_step(w(0.0), w(0.7), w(1.0)).to_f32(), 1.0);
        // 0.9 -> 0x3B33, 0.2 -> 0x3266; sum is 1.0996..., rounds to 0x3C66
        let r = diff_step(w(0.9), w(1.0), w(0.2));
        assert_eq!(r, Word16(0x3C66));
    }

    #[test]
    fn nan_propagates() {
        let nan = Word16(0x7E00);
        assert!(fp_add(nan, Word16::FP_ONE).is_nan());
        assert!(diff_step(nan, Word16::FP_ONE, Word16::ZERO).is_nan());
        let inf = Word16(0x7C00);
        assert!(fp_sub(inf, inf).is_nan());
    }

    #[test]
    fn next_steps_one_ulp() {
        assert_eq!(fp_next(Word16(0x3C00), true), Word16(0x3C01));
        assert_eq!(fp_next(Word16(0x3C00), false), Word16(0x3BFF));
        assert_eq!(fp_next(Word16(0xBC00), true), Word16(0xBBFF));
        assert_eq!(fp_next(Word16(0), false), Word16(0x8001));
    }
}
