//! Scale codecs: E8M0, generic sign-less EeMm minifloats (E4M3 among them),
//! linear INT8 levels, and the data-fitted E8M0 exponent grid.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// `2^k` built from bits, exact over the whole binary64 range.
pub(crate) fn exp2i(k: i32) -> f64 {
    if k > 1023 {
        f64::INFINITY
    } else if k >= -1022 {
        f64::from_bits(((k + 1023) as u64) << 52)
    } else if k >= -1074 {
        f64::from_bits(1u64 << (k + 1074))
    } else {
        0.0
    }
}

/// `floor(log2 x)` for positive finite `x`, read from the bit pattern.
pub(crate) fn floor_log2(x: f64) -> i32 {
    debug_assert!(x > 0.0 && x.is_finite());
    let bits = x.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i32;
    if biased == 0 {
        let mant = bits & ((1u64 << 52) - 1);
        -1074 + (63 - mant.leading_zeros() as i32)
    } else {
        biased - 1023
    }
}

fn check_scale(s: f64) -> Result<()> {
    if s > 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidScale(s))
    }
}

pub const E8M0_BIAS: i32 = 127;
pub const E8M0_RESERVED: u8 = 0xff;

/// Nearest power of two in the log domain, exponent clamped to `[-127, 127]`.
///
/// Code 255 is never produced.
pub fn e8m0_encode(s: f64) -> Result<u8> {
    check_scale(s)?;
    let mut k = floor_log2(s);
    // s / 2^k lies in [1, 2); no binary64 value sits between sqrt(2) and its
    // rounded constant, so this comparison is the exact log-domain midpoint.
    if s / exp2i(k) >= std::f64::consts::SQRT_2 {
        k += 1;
    }
    Ok((k.clamp(-E8M0_BIAS, E8M0_BIAS) + E8M0_BIAS) as u8)
}

pub fn e8m0_decode(code: u8) -> Result<f64> {
    if code == E8M0_RESERVED {
        return Err(Error::InvalidCode {
            code: code as u64,
            format: "e8m0".into(),
        });
    }
    Ok(exp2i(code as i32 - E8M0_BIAS))
}

/// A sign-less floating-point scale format with `exp_bits` exponent bits,
/// `man_bits` mantissa bits and the given bias.
///
/// Subnormals are supported. The all-ones code is reserved (NaN in E4M3),
/// which puts E4M3's largest finite value at 448.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FpFormat {
    pub exp_bits: u8,
    pub man_bits: u8,
    pub bias: i32,
}

impl FpFormat {
    pub const E4M3: Self = Self {
        exp_bits: 4,
        man_bits: 3,
        bias: 7,
    };

    pub fn new(exp_bits: u8, man_bits: u8, bias: i32) -> Result<Self> {
        if exp_bits == 0 || exp_bits as u32 + man_bits as u32 > 7 {
            return Err(Error::InvalidArgument(format!(
                "fp scale format needs exp_bits >= 1 and exp_bits + man_bits <= 7, got e{exp_bits}m{man_bits}"
            )));
        }
        Ok(Self {
            exp_bits,
            man_bits,
            bias,
        })
    }

    /// IEEE-style bias `2^(e-1) - 1`.
    pub fn with_default_bias(exp_bits: u8, man_bits: u8) -> Result<Self> {
        let bias = (1i32 << exp_bits.saturating_sub(1)) - 1;
        Self::new(exp_bits, man_bits, bias)
    }

    pub fn code_count(&self) -> u32 {
        1 << (self.exp_bits + self.man_bits)
    }

    pub fn reserved_code(&self) -> u8 {
        (self.code_count() - 1) as u8
    }

    pub fn max_code(&self) -> u8 {
        self.reserved_code() - 1
    }

    fn min_normal_exp(&self) -> i32 {
        1 - self.bias
    }

    pub fn max_value(&self) -> f64 {
        self.decode(self.max_code()).expect("max code is valid")
    }

    pub fn min_subnormal(&self) -> f64 {
        exp2i(self.min_normal_exp() - self.man_bits as i32)
    }

    pub fn decode(&self, code: u8) -> Result<f64> {
        if code as u32 >= self.code_count() || code == self.reserved_code() {
            return Err(Error::InvalidCode {
                code: code as u64,
                format: self.to_string(),
            });
        }
        let m = self.man_bits as i32;
        let field = (code >> self.man_bits) as i32;
        let mant = (code & ((1u8 << self.man_bits) - 1)) as f64;
        Ok(if field == 0 {
            mant * exp2i(self.min_normal_exp() - m)
        } else {
            (exp2i(m) + mant) * exp2i(field - self.bias - m)
        })
    }

    /// Round-to-nearest-even over normals and subnormals, saturating at
    /// [`max_value`](Self::max_value). Zero and inputs below half the
    /// smallest subnormal encode to code 0.
    pub fn encode(&self, s: f64) -> Result<u8> {
        if s == 0.0 {
            return Ok(0);
        }
        check_scale(s)?;
        let max = self.max_value();
        if s >= max {
            return Ok(self.max_code());
        }
        let m = self.man_bits as i32;
        let k = floor_log2(s).max(self.min_normal_exp());
        let quantum = exp2i(k - m);
        let v = (s / quantum).round_ties_even() * quantum;
        if v >= max {
            return Ok(self.max_code());
        }
        Ok(self.code_of(v))
    }

    /// Code of an exactly representable value.
    fn code_of(&self, v: f64) -> u8 {
        if v == 0.0 {
            return 0;
        }
        let m = self.man_bits as i32;
        let k = floor_log2(v);
        if k < self.min_normal_exp() {
            (v / exp2i(self.min_normal_exp() - m)) as u8
        } else {
            let field = (k + self.bias) as u8;
            let mant = (v / exp2i(k - m)) as u32 - (1u32 << m);
            (field << self.man_bits) | mant as u8
        }
    }
}

impl fmt::Display for FpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}m{}", self.exp_bits, self.man_bits)?;
        if Self::with_default_bias(self.exp_bits, self.man_bits).map_or(true, |d| d.bias != self.bias) {
            write!(f, ":b{}", self.bias)?;
        }
        Ok(())
    }
}

/// Encodes into any non-E8M0 scale format. E8M0 is routed to [`e8m0_encode`].
pub fn fp_scale_encode(s: f64, fmt: &ScaleFormat) -> Result<u64> {
    match fmt {
        ScaleFormat::Fp(f) => f.encode(s).map(u64::from),
        ScaleFormat::Int8Linear { range } => {
            check_scale(s)?;
            let (lo, hi) = range.ok_or(Error::Uncalibrated)?;
            let step = (hi - lo) / 255.0;
            if step == 0.0 {
                return Ok(0);
            }
            Ok(((s - lo) / step).round_ties_even().clamp(0.0, 255.0) as u64)
        }
        ScaleFormat::E8M0 => e8m0_encode(s).map(u64::from),
        ScaleFormat::Unquantized => {
            check_scale(s)?;
            Ok(s.to_bits())
        }
    }
}

pub fn fp_scale_decode(code: u64, fmt: &ScaleFormat) -> Result<f64> {
    let invalid = || Error::InvalidCode {
        code,
        format: fmt.to_string(),
    };
    match fmt {
        ScaleFormat::Fp(f) => f.decode(u8::try_from(code).map_err(|_| invalid())?),
        ScaleFormat::Int8Linear { range } => {
            let (lo, hi) = range.ok_or(Error::Uncalibrated)?;
            if code > 255 {
                return Err(invalid());
            }
            Ok(lo + code as f64 * ((hi - lo) / 255.0))
        }
        ScaleFormat::E8M0 => e8m0_decode(u8::try_from(code).map_err(|_| invalid())?),
        ScaleFormat::Unquantized => {
            let s = f64::from_bits(code);
            if s.is_finite() && s >= 0.0 {
                Ok(s)
            } else {
                Err(invalid())
            }
        }
    }
}

/// How per-group scales are stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleFormat {
    /// Power-of-two exponent byte (MXFP4).
    E8M0,
    /// Sign-less minifloat, e.g. E4M3 (NVFP4).
    Fp(FpFormat),
    /// 256 uniform levels over a per-tensor calibration range.
    Int8Linear { range: Option<(f64, f64)> },
    /// Raw binary64 scale.
    Unquantized,
}

impl ScaleFormat {
    pub const E4M3: Self = Self::Fp(FpFormat::E4M3);

    /// Bytes used per stored scale code.
    pub fn code_bytes(&self) -> usize {
        match self {
            Self::Unquantized => 8,
            _ => 1,
        }
    }

    /// The sign-less `EeMm` family with `e + m = 7` and default bias.
    pub fn fp8_family() -> Vec<Self> {
        (1..=7)
            .map(|e| Self::Fp(FpFormat::with_default_bias(e, 7 - e).expect("valid")))
            .collect()
    }
}

impl fmt::Display for ScaleFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::E8M0 => f.write_str("e8m0"),
            Self::Fp(fp) => write!(f, "{fp}"),
            Self::Int8Linear { range: None } => f.write_str("int8"),
            Self::Int8Linear { range: Some((lo, hi)) } => write!(f, "int8:{lo:?}:{hi:?}"),
            Self::Unquantized => f.write_str("unquantized"),
        }
    }
}

impl FromStr for ScaleFormat {
    type Err = Error;

    /// Accepts `e8m0`, `e4m3`, `e3m4:b5`, `int8`, `int8:<lo>:<hi>`, `unquantized`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown scale format `{s}`"));
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "e8m0" => return Ok(Self::E8M0),
            "int8" => return Ok(Self::Int8Linear { range: None }),
            "unquantized" | "none" | "fp64" => return Ok(Self::Unquantized),
            _ => {}
        }
        if let Some(rest) = lower.strip_prefix("int8:") {
            let (lo, hi) = rest.split_once(':').ok_or_else(bad)?;
            let lo: f64 = lo.parse().map_err(|_| bad())?;
            let hi: f64 = hi.parse().map_err(|_| bad())?;
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(bad());
            }
            return Ok(Self::Int8Linear { range: Some((lo, hi)) });
        }
        let (body, bias) = match lower.split_once(":b") {
            Some((b, bias)) => (b, Some(bias.parse::<i32>().map_err(|_| bad())?)),
            None => (lower.as_str(), None),
        };
        let body = body.strip_prefix('e').ok_or_else(bad)?;
        let (e, m) = body.split_once('m').ok_or_else(bad)?;
        let e: u8 = e.parse().map_err(|_| bad())?;
        let m: u8 = m.parse().map_err(|_| bad())?;
        let fp = match bias {
            Some(b) => FpFormat::new(e, m, b)?,
            None => FpFormat::with_default_bias(e, m)?,
        };
        Ok(Self::Fp(fp))
    }
}

/// Data-fitted exponent grid: code `q` decodes to `2^(alpha * q + beta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFit {
    pub alpha: f64,
    pub beta: f64,
}

impl ScaleFit {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scale fit needs finite alpha >= 0 and finite beta, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn encode(&self, s: f64) -> Result<u8> {
        check_scale(s)?;
        if self.alpha == 0.0 {
            return Ok(0);
        }
        Ok(((s.log2() - self.beta) / self.alpha)
            .round_ties_even()
            .clamp(0.0, 255.0) as u8)
    }

    pub fn decode(&self, code: u8) -> f64 {
        (self.alpha * code as f64 + self.beta).exp2()
    }
}

/// Everything needed to turn a stored scale code back into a real scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleCodec {
    pub format: ScaleFormat,
    /// E8M0 only: decoded scales are multiplied by 4/3.
    pub four_thirds: bool,
    /// E8M0 only: replaces the power-of-two grid with a fitted one.
    pub fit: Option<ScaleFit>,
}

impl ScaleCodec {
    pub fn plain(format: ScaleFormat) -> Self {
        Self {
            format,
            four_thirds: false,
            fit: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.four_thirds || self.fit.is_some()) && self.format != ScaleFormat::E8M0 {
            return Err(Error::InvalidArgument(format!(
                "4/3 rescaling and scale fitting require e8m0 scales, not {}",
                self.format
            )));
        }
        if self.four_thirds && self.fit.is_some() {
            return Err(Error::InvalidArgument(
                "4/3 rescaling is replaced by the fitted grid; enable only one".into(),
            ));
        }
        Ok(())
    }

    pub fn encode(&self, s: f64) -> Result<u64> {
        match (&self.format, &self.fit) {
            (ScaleFormat::E8M0, Some(fit)) => fit.encode(s).map(u64::from),
            (fmt, _) => fp_scale_encode(s, fmt),
        }
    }

    pub fn decode(&self, code: u64) -> Result<f64> {
        match (&self.format, &self.fit) {
            (ScaleFormat::E8M0, Some(fit)) => {
                let q = u8::try_from(code).map_err(|_| Error::InvalidCode {
                    code,
                    format: "fitted e8m0".into(),
                })?;
                Ok(fit.decode(q))
            }
            (fmt, _) => {
                let v = fp_scale_decode(code, fmt)?;
                Ok(if self.four_thirds { v * (4.0 / 3.0) } else { v })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn e8m0_examples() {
        assert_eq!(e8m0_encode(1.0).unwrap(), 127);
        assert_eq!(e8m0_decode(127).unwrap(), 1.0);
        assert_eq!(e8m0_decode(0).unwrap(), 2f64.powi(-127));
        // round(log2 0.8333) = round(-0.263) = 0
        assert_eq!(e8m0_encode(0.8333).unwrap(), 127);
        assert!(e8m0_decode(255).is_err());
        assert!(e8m0_encode(0.0).is_err());
        assert!(e8m0_encode(-1.0).is_err());
        assert!(e8m0_encode(f64::NAN).is_err());
        assert_eq!(e8m0_encode(1e300).unwrap(), 254);
        assert_eq!(e8m0_encode(1e-300).unwrap(), 0);
        assert_eq!(e8m0_encode(f64::MIN_POSITIVE / 1e10).unwrap(), 0);
    }

    #[test]
    fn e8m0_all_codes_round_trip() {
        for c in 0..=254u8 {
            assert_eq!(e8m0_encode(e8m0_decode(c).unwrap()).unwrap(), c);
        }
    }

    #[test]
    fn e8m0_log_midpoint() {
        let s2 = std::f64::consts::SQRT_2;
        assert_eq!(e8m0_encode(s2).unwrap(), 128);
        let below = f64::from_bits(s2.to_bits() - 1);
        assert_eq!(e8m0_encode(below).unwrap(), 127);
    }

    #[test]
    fn e4m3_examples() {
        let f = FpFormat::E4M3;
        assert_eq!(f.max_value(), 448.0);
        assert_eq!(f.min_subnormal(), 2f64.powi(-9));
        assert_eq!(f.decode(f.encode(448.0).unwrap()).unwrap(), 448.0);
        assert_eq!(f.decode(f.encode(1.0).unwrap()).unwrap(), 1.0);
        assert_eq!(f.decode(f.encode(500.0).unwrap()).unwrap(), 448.0);
        assert_eq!(f.encode(1.0).unwrap(), 0x38);
        assert!(f.decode(0x7f).is_err());
        assert!(f.decode(0x80).is_err());
        // Below half the smallest subnormal rounds to zero.
        assert_eq!(f.encode(2f64.powi(-11)).unwrap(), 0);
        // 17 is a tie between 16 and 18 at exponent 4 (quantum 2): 16 has even mantissa.
        assert_eq!(f.decode(f.encode(17.0).unwrap()).unwrap(), 16.0);
        assert_eq!(f.decode(f.encode(19.0).unwrap()).unwrap(), 20.0);
    }

    #[test]
    fn fp_family_bijective() {
        for fmt in ScaleFormat::fp8_family() {
            let ScaleFormat::Fp(f) = fmt else { unreachable!() };
            for c in 1..=f.max_code() {
                let v = f.decode(c).unwrap();
                assert_eq!(f.encode(v).unwrap(), c, "{f} code {c}");
            }
        }
    }

    #[test]
    fn int8_linear() {
        let fmt = ScaleFormat::Int8Linear { range: Some((1.0, 256.0)) };
        assert_eq!(fp_scale_encode(1.0, &fmt).unwrap(), 0);
        assert_eq!(fp_scale_encode(256.0, &fmt).unwrap(), 255);
        assert_eq!(fp_scale_decode(10, &fmt).unwrap(), 11.0);
        assert_eq!(fp_scale_encode(1000.0, &fmt).unwrap(), 255);
        let unc = ScaleFormat::Int8Linear { range: None };
        assert!(matches!(fp_scale_encode(1.0, &unc), Err(Error::Uncalibrated)));
        assert!(fp_scale_encode(-1.0, &fmt).is_err());
    }

    #[test]
    fn parse_display_round_trip() {
        let all = [
            ScaleFormat::E8M0,
            ScaleFormat::E4M3,
            ScaleFormat::Fp(FpFormat::new(3, 4, 5).unwrap()),
            ScaleFormat::Int8Linear { range: None },
            ScaleFormat::Int8Linear { range: Some((0.1, 3.25)) },
            ScaleFormat::Unquantized,
        ];
        for f in all {
            assert_eq!(f.to_string().parse::<ScaleFormat>().unwrap(), f);
        }
        assert!("e5m5".parse::<ScaleFormat>().is_err());
        assert!("bogus".parse::<ScaleFormat>().is_err());
    }

    #[test]
    fn fit_codec() {
        let fit = ScaleFit::new(1.0 / 255.0, 0.0).unwrap();
        assert_eq!(fit.encode(1.0).unwrap(), 0);
        assert_eq!(fit.encode(2.0).unwrap(), 255);
        assert_eq!(fit.encode(std::f64::consts::SQRT_2).unwrap(), 128);
        assert!(ScaleFit::new(-0.5, 0.0).is_err());
        assert!(ScaleFit::new(0.1, f64::NAN).is_err());
    }

    #[test]
    fn codec_four_thirds() {
        let c = ScaleCodec {
            format: ScaleFormat::E8M0,
            four_thirds: true,
            fit: None,
        };
        let code = c.encode(5.0 / 6.0).unwrap();
        assert_eq!(code, 127);
        assert_eq!(c.decode(code).unwrap(), 4.0 / 3.0);
        let bad = ScaleCodec {
            format: ScaleFormat::E4M3,
            four_thirds: true,
            fit: None,
        };
        assert!(bad.validate().is_err());
    }

    fn half_ulp_bound(m: u8) -> f64 {
        let h = 2f64.powi(-(m as i32 + 1));
        h / (1.0 - h)
    }

    proptest::proptest! {
        #[test]
        fn e8m0_dead_range(k in -126i32..=126, t in 0.0f64..1.0) {
            let eps = 1e-9;
            let lo = (-0.5f64 + eps).exp2();
            let hi = (0.5f64 - eps).exp2();
            let s = exp2i(k) * (lo + t * (hi - lo));
            proptest::prop_assert_eq!(e8m0_decode(e8m0_encode(s).unwrap()).unwrap(), exp2i(k));
        }

        #[test]
        fn e4m3_relative_error(s in 2f64.powi(-6)..448.0) {
            let f = FpFormat::E4M3;
            let q = f.decode(f.encode(s).unwrap()).unwrap();
            proptest::prop_assert!(((q - s) / s).abs() <= half_ulp_bound(3));
        }

        #[test]
        fn fp_family_monotone(e in 1u8..=7, a in 1e-4f64..1e4, b in 1e-4f64..1e4) {
            let f = FpFormat::with_default_bias(e, 7 - e).unwrap();
            let (x, y) = if a <= b { (a, b) } else { (b, a) };
            let qx = f.decode(f.encode(x).unwrap()).unwrap();
            let qy = f.decode(f.encode(y).unwrap()).unwrap();
            proptest::prop_assert!(qx <= qy);
        }

        #[test]
        fn fp_family_relative_error(e in 1u8..=6, t in 0.0f64..1.0) {
            let f = FpFormat::with_default_bias(e, 7 - e).unwrap();
            let lo = exp2i(1 - f.bias);
            let s = lo * (f.max_value() / lo).powf(t);
            let q = f.decode(f.encode(s).unwrap()).unwrap();
            proptest::prop_assert!(((q - s) / s).abs() <= half_ulp_bound(f.man_bits) * (1.0 + 1e-12));
        }
    }
}
