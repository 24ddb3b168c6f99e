//! Round-to-nearest microscaling quantization and reconstruction.

mod scales;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formats::{Fp4Code, FormatSpec, MfpTensor, ScaleFit, ScaleFormat, TensorMeta, FP4_MAX};
use crate::metrics::ErrorStats;
use crate::transforms::{BlockTransform, Direction, TransformSpec};

pub use scales::fit_e8m0_range;
pub(crate) use scales::{quantize_elem, GroupScales};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ScaleMode {
    #[default]
    AbsMax,
    /// Alternating search over group multipliers and the tensor scale.
    MseOptimized,
}

/// Whether E8M0 scales use a data-fitted exponent grid.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ScaleFitting {
    #[default]
    Off,
    /// Fit `(alpha, beta)` to the tensor's own scale range.
    FromData,
    Fixed(ScaleFit),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalePolicy {
    pub mode: ScaleMode,
    /// Decode E8M0 scales as `4/3 · 2^round(log2 s)`. Ignored while a fitted
    /// grid is active.
    pub four_thirds: bool,
    pub scale_fit: ScaleFitting,
    /// Tensor scale used when the format has no computed global scale.
    pub tensor_scale: f32,
}

impl ScalePolicy {
    /// Absmax scales; 4/3 rescaling on for E8M0.
    pub fn for_spec(spec: &FormatSpec) -> Self {
        Self {
            mode: ScaleMode::AbsMax,
            four_thirds: spec.scale == ScaleFormat::E8M0,
            scale_fit: ScaleFitting::Off,
            tensor_scale: 1.0,
        }
    }

    pub fn with_mode(mut self, mode: ScaleMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_scale_fit(mut self, fit: ScaleFitting) -> Self {
        self.scale_fit = fit;
        self
    }

    pub fn with_four_thirds(mut self, on: bool) -> Self {
        self.four_thirds = on;
        self
    }
}

#[derive(Debug, Clone)]
pub struct QuantResult {
    pub tensor: MfpTensor,
    pub mse_rel: f64,
    pub mse_top_rel: f64,
    pub stats: ErrorStats,
}

impl QuantResult {
    /// Metrics of `reconstruct(tensor)` against `original`.
    pub(crate) fn evaluate(tensor: MfpTensor, original: &Array2<f64>) -> Self {
        let xhat = reconstruct_f64(&tensor);
        let stats = ErrorStats::compute(original.view(), xhat.view(), tensor.spec().group_size);
        Self {
            tensor,
            mse_rel: stats.mse_rel,
            mse_top_rel: stats.mse_top_rel,
            stats,
        }
    }
}

/// `max |x| / 6`, or the sentinel 1.0 for an all-zero block.
pub fn absmax_group_scale(block: &[f64], spec: &FormatSpec) -> Result<f64> {
    if block.len() != spec.group_size {
        return Err(Error::Shape(format!(
            "block of {} elements for group size {}",
            block.len(),
            spec.group_size
        )));
    }
    if block.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let m = block.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(if m == 0.0 { 1.0 } else { m / FP4_MAX })
}

pub(crate) fn to_f64(x: &Array2<f32>) -> Array2<f64> {
    x.as_standard_layout().mapv(f64::from)
}

/// Applies the optional transform, returning the matrix in the quantization domain.
pub(crate) fn forward(x: &Array2<f64>, transform: Option<TransformSpec>) -> Result<Array2<f64>> {
    let mut y = x.as_standard_layout().into_owned();
    if let Some(t) = transform {
        BlockTransform::new(t)?.apply_rows(&mut y, Direction::Forward)?;
    }
    Ok(y)
}

pub(crate) fn meta_for(scales: &GroupScales, policy: &ScalePolicy, transform: Option<TransformSpec>) -> TensorMeta {
    TensorMeta {
        tensor_scale: scales.tensor_scale,
        transform,
        four_thirds: scales.codec.four_thirds,
        scale_fit: scales.codec.fit,
        scale_mode: policy.mode,
        permutation: None,
    }
}

/// Spec with any auto-calibrated INT8 range filled in.
pub(crate) fn resolved_spec(spec: &FormatSpec, scales: &GroupScales) -> FormatSpec {
    FormatSpec {
        scale: scales.codec.format,
        ..*spec
    }
}

/// Round-to-nearest quantization with absmax (or MSE-searched) group scales.
pub fn quantize_rtn(
    x: &Array2<f32>,
    spec: &FormatSpec,
    policy: &ScalePolicy,
    transform: Option<TransformSpec>,
) -> Result<QuantResult> {
    let orig = to_f64(x);
    if orig.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    spec.check_cols(orig.ncols())?;
    let y = forward(&orig, transform)?;
    let scales = GroupScales::plan(&y, spec, policy)?;
    let g = spec.group_size;
    let data = y.as_slice().expect("standard layout");
    let codes: Vec<Fp4Code> = data
        .par_chunks(g)
        .zip(scales.effective.par_iter())
        .flat_map_iter(|(xs, &eff)| xs.iter().map(move |&v| quantize_elem(v, eff)))
        .collect();
    let tensor = MfpTensor::pack(
        resolved_spec(spec, &scales),
        y.dim(),
        &codes,
        scales.codes.clone(),
        meta_for(&scales, policy, transform),
    )?;
    Ok(QuantResult::evaluate(tensor, &orig))
}

/// [`quantize_rtn`] with [`ScaleMode::MseOptimized`] and default policy flags.
pub fn mse_optimize_scales(
    x: &Array2<f32>,
    spec: &FormatSpec,
    transform: Option<TransformSpec>,
) -> Result<QuantResult> {
    let policy = ScalePolicy::for_spec(spec).with_mode(ScaleMode::MseOptimized);
    quantize_rtn(x, spec, &policy, transform)
}

pub(crate) fn reconstruct_f64(t: &MfpTensor) -> Array2<f64> {
    let mut x = t.dequantize_f64();
    if let Some(spec) = t.meta().transform {
        BlockTransform::new(spec)
            .and_then(|bt| bt.apply_rows(&mut x, Direction::Inverse))
            .expect("transform validated on construction");
    }
    x
}

/// Dequantizes and undoes the recorded transform.
pub fn reconstruct(t: &MfpTensor) -> Array2<f32> {
    reconstruct_f64(t).mapv(|v| v as f32)
}
