use ndarray::Array2;

use super::{Fp4Code, FormatSpec, ScaleCodec, ScaleFit, ScaleFormat};
use crate::error::{Error, Result};
use crate::quantizers::ScaleMode;
use crate::transforms::TransformSpec;

/// Everything about a quantized tensor besides its codes.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorMeta {
    /// Per-tensor scale `s_T`; 1.0 when the format has none.
    pub tensor_scale: f32,
    /// Transform applied to the rows before quantization.
    pub transform: Option<TransformSpec>,
    pub four_thirds: bool,
    pub scale_fit: Option<ScaleFit>,
    pub scale_mode: ScaleMode,
    /// Column order used by GPTQ with activation reordering, if any.
    /// Informational: codes are always stored in the original column order.
    pub permutation: Option<Vec<usize>>,
}

impl Default for TensorMeta {
    fn default() -> Self {
        Self {
            tensor_scale: 1.0,
            transform: None,
            four_thirds: false,
            scale_fit: None,
            scale_mode: ScaleMode::AbsMax,
            permutation: None,
        }
    }
}

/// Packed microscaling tensor: 4-bit codes two per byte (low nibble first,
/// row-major) and one scale code per group of `G` consecutive row elements.
#[derive(Debug, Clone, PartialEq)]
pub struct MfpTensor {
    spec: FormatSpec,
    rows: usize,
    cols: usize,
    codes: Vec<u8>,
    scale_codes: Vec<u64>,
    meta: TensorMeta,
}

impl MfpTensor {
    pub fn pack(
        spec: FormatSpec,
        (rows, cols): (usize, usize),
        codes: &[Fp4Code],
        scale_codes: Vec<u64>,
        meta: TensorMeta,
    ) -> Result<Self> {
        if codes.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} element codes for a {rows}x{cols} tensor",
                codes.len()
            )));
        }
        let packed = codes
            .chunks(2)
            .map(|p| p[0].to_bits() | p.get(1).map_or(0, |c| c.to_bits() << 4))
            .collect();
        Self::from_packed(spec, (rows, cols), packed, scale_codes, meta)
    }

    /// Builds a tensor from already-packed code bytes, validating everything.
    pub fn from_packed(
        spec: FormatSpec,
        (rows, cols): (usize, usize),
        codes: Vec<u8>,
        scale_codes: Vec<u64>,
        meta: TensorMeta,
    ) -> Result<Self> {
        let t = Self {
            spec,
            rows,
            cols,
            codes,
            scale_codes,
            meta,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        self.spec.check_cols(self.cols)?;
        let n = self.rows * self.cols;
        if self.codes.len() != n.div_ceil(2) {
            return Err(Error::Shape(format!(
                "{} code bytes for {n} elements",
                self.codes.len()
            )));
        }
        if n % 2 == 1 && self.codes.last().is_some_and(|b| b >> 4 != 0) {
            return Err(Error::Corrupt("padding nibble is not zero".into()));
        }
        if self.scale_codes.len() != self.group_count() {
            return Err(Error::Shape(format!(
                "{} scale codes, expected {}",
                self.scale_codes.len(),
                self.group_count()
            )));
        }
        let s = self.meta.tensor_scale;
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidScale(s as f64));
        }
        if let ScaleFormat::Int8Linear { range: None } = self.spec.scale {
            return Err(Error::Uncalibrated);
        }
        let codec = self.scale_codec();
        codec.validate()?;
        for &c in &self.scale_codes {
            codec.decode(c)?;
        }
        if let Some(t) = &self.meta.transform {
            t.check_cols(self.cols)?;
        }
        if let Some(p) = &self.meta.permutation {
            let mut seen = vec![false; self.cols];
            if p.len() != self.cols || !p.iter().all(|&i| i < self.cols && !std::mem::replace(&mut seen[i], true)) {
                return Err(Error::Shape("permutation is not a permutation of the columns".into()));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &FormatSpec {
        &self.spec
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn meta(&self) -> &TensorMeta {
        &self.meta
    }

    pub fn packed_codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn scale_codes(&self) -> &[u64] {
        &self.scale_codes
    }

    pub fn group_count(&self) -> usize {
        self.rows * (self.cols / self.spec.group_size)
    }

    pub fn scale_codec(&self) -> ScaleCodec {
        ScaleCodec {
            format: self.spec.scale,
            four_thirds: self.meta.four_thirds,
            fit: self.meta.scale_fit,
        }
    }

    pub fn code(&self, index: usize) -> Fp4Code {
        let byte = self.codes[index / 2];
        let bits = if index % 2 == 0 { byte & 0xf } else { byte >> 4 };
        Fp4Code::from_bits(bits).expect("nibble")
    }

    pub fn unpack(&self) -> Vec<Fp4Code> {
        (0..self.rows * self.cols).map(|i| self.code(i)).collect()
    }

    /// Decoded group scales (without `s_T`), row-major.
    pub fn group_scales(&self) -> Vec<f64> {
        let codec = self.scale_codec();
        self.scale_codes
            .iter()
            .map(|&c| codec.decode(c).expect("validated on construction"))
            .collect()
    }

    pub(crate) fn dequantize_f64(&self) -> Array2<f64> {
        let g = self.spec.group_size;
        let scales = self.group_scales();
        let st = self.meta.tensor_scale as f64;
        let cols = self.cols;
        Array2::from_shape_fn((self.rows, cols), |(r, c)| {
            let i = r * cols + c;
            st * scales[i / g] * self.code(i).decode()
        })
    }

    /// `s_T · scale(group) · element`. Does not undo the transform.
    pub fn dequantize(&self) -> Array2<f32> {
        self.dequantize_f64().mapv(|v| v as f32)
    }
}

/// See [`MfpTensor::dequantize`].
pub fn dequantize(t: &MfpTensor) -> Array2<f32> {
    t.dequantize()
}
