//! FP4 E2M1 element codec.
//!
//! Bit layout of a code: `s ee m` (sign, two exponent bits, one mantissa
//! bit). The magnitude index `ee m` enumerates the grid
//! `{0, 0.5, 1, 1.5, 2, 3, 4, 6}`, so an even index means a zero mantissa bit.

use crate::error::{Error, Result};

/// Largest magnitude representable in E2M1.
pub const FP4_MAX: f64 = 6.0;

/// Positive grid values indexed by the low three bits of a code.
pub const FP4_MAGNITUDES: [f64; 8] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];

const SIGN_BIT: u8 = 0b1000;

/// A 4-bit E2M1 element code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
#[repr(transparent)]
pub struct Fp4Code(u8);

impl Fp4Code {
    pub const ZERO: Self = Self(0);

    /// Wraps a raw nibble; `None` if `bits > 15`.
    pub const fn from_bits(bits: u8) -> Option<Self> {
        if bits < 16 {
            Some(Self(bits))
        } else {
            None
        }
    }

    pub const fn to_bits(self) -> u8 {
        self.0
    }

    pub const fn is_negative(self) -> bool {
        self.0 & SIGN_BIT != 0
    }

    /// Decodes to the grid value. Both zero encodings decode to `0.0`.
    pub fn decode(self) -> f64 {
        let mag = FP4_MAGNITUDES[(self.0 & 0b0111) as usize];
        if self.is_negative() && mag != 0.0 {
            -mag
        } else {
            mag
        }
    }

    /// Round-to-nearest-even encoding with saturation at ±6.
    pub fn encode(x: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(Self::encode_saturating(x))
    }

    /// Like [`encode`](Self::encode) but maps ±∞ to ±6. NaN maps to zero.
    pub(crate) fn encode_saturating(x: f64) -> Self {
        let idx = magnitude_index(x.abs());
        if idx == 0 {
            Self::ZERO
        } else if x < 0.0 {
            Self(SIGN_BIT | idx)
        } else {
            Self(idx)
        }
    }
}

fn magnitude_index(a: f64) -> u8 {
    if !(a > 0.0) {
        return 0;
    }
    if a >= FP4_MAX {
        return 7;
    }
    let mut i = 0usize;
    while FP4_MAGNITUDES[i + 1] <= a {
        i += 1;
    }
    let (lo, hi) = (FP4_MAGNITUDES[i], FP4_MAGNITUDES[i + 1]);
    let mid = 0.5 * (lo + hi);
    let up = if a == mid { i % 2 == 1 } else { a > mid };
    (if up { i + 1 } else { i }) as u8
}

/// Rounds `x` onto the E2M1 grid (nearest, ties to even mantissa, saturating).
pub fn fp4_round(x: f64) -> Result<f64> {
    Fp4Code::encode(x).map(Fp4Code::decode)
}
