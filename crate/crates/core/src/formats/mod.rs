//! Element and scale codecs and the packed microscaling tensor.

mod fp4;
mod scale;
mod tensor;

pub use fp4::{fp4_round, Fp4Code, FP4_MAGNITUDES, FP4_MAX};
pub(crate) use scale::{exp2i, floor_log2};
pub use scale::{
    e8m0_decode, e8m0_encode, fp_scale_decode, fp_scale_encode, FpFormat, ScaleCodec, ScaleFit,
    ScaleFormat,
};
pub use tensor::{dequantize, MfpTensor, TensorMeta};

use crate::error::{Error, Result};

/// Element codec. Only FP4 E2M1 is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ElementFormat {
    #[default]
    E2M1,
}

impl ElementFormat {
    pub fn max_value(self) -> f64 {
        FP4_MAX
    }
}

/// Group size, element codec, scale codec and whether a per-tensor scale is used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormatSpec {
    pub group_size: usize,
    pub element: ElementFormat,
    pub scale: ScaleFormat,
    pub global_scale: bool,
}

impl FormatSpec {
    pub fn new(group_size: usize, scale: ScaleFormat, global_scale: bool) -> Result<Self> {
        let spec = Self {
            group_size,
            element: ElementFormat::E2M1,
            scale,
            global_scale,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// G = 32, E8M0 scales, no tensor scale.
    pub fn mxfp4() -> Self {
        Self {
            group_size: 32,
            element: ElementFormat::E2M1,
            scale: ScaleFormat::E8M0,
            global_scale: false,
        }
    }

    /// G = 16, E4M3 scales, with a tensor scale.
    pub fn nvfp4() -> Self {
        Self {
            group_size: 16,
            element: ElementFormat::E2M1,
            scale: ScaleFormat::E4M3,
            global_scale: true,
        }
    }

    pub fn with_group_size(mut self, group_size: usize) -> Self {
        self.group_size = group_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 {
            return Err(Error::InvalidArgument("group size must be positive".into()));
        }
        Ok(())
    }

    pub fn check_cols(&self, cols: usize) -> Result<()> {
        self.validate()?;
        if cols % self.group_size != 0 {
            return Err(Error::Divisibility {
                what: "group size",
                dim: cols,
                divisor: self.group_size,
            });
        }
        Ok(())
    }
}
