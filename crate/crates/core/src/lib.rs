//! Microscaling FP4 quantization.
//!
//! This crate implements the MXFP4 and NVFP4 block formats (FP4 E2M1 elements
//! sharing E8M0 / E4M3 group scales), round-to-nearest and MSE-optimized
//! quantizers, block-diagonal rotations, GPTQ with static activation
//! reordering (MR-GPTQ), and a Monte Carlo harness that measures the
//! quantization error statistics these formats induce on Laplace and Normal
//! data.
//!
//! The main entry points are re-exported at the crate root:
//!
//! - [`quantize_rtn`], [`mse_optimize_scales`] and [`reconstruct`] for
//!   round-to-nearest quantization into an [`MfpTensor`];
//! - [`gptq_quantize`] and [`mr_gptq`] for Hessian-aware weight quantization;
//! - [`analysis`] for the error-analysis experiments;
//! - [`io`] for the `MFPT` tensor and `MFPQ` quantized container files.

pub mod analysis;
pub mod error;
pub mod formats;
pub mod gptq;
pub mod io;
pub mod metrics;
pub mod quantizers;
pub mod rng;
pub mod transforms;

pub use error::{Error, Result};
pub use formats::{
    dequantize, e8m0_decode, e8m0_encode, fp4_round, fp_scale_decode, fp_scale_encode, FormatSpec,
    Fp4Code, FpFormat, MfpTensor, ScaleCodec, ScaleFit, ScaleFormat,
};
pub use gptq::{
    gptq_quantize, mr_gptq, obq_fixed_order, static_act_order, GptqConfig, Hessian, MrGptqOptions,
};
pub use metrics::ErrorStats;
pub use quantizers::{
    absmax_group_scale, fit_e8m0_range, mse_optimize_scales, quantize_rtn, reconstruct,
    QuantResult, ScaleFitting, ScaleMode, ScalePolicy,
};
pub use transforms::{apply_blockwise, fuse_into_weights, transform_matrix, Direction, TransformKind, TransformSpec};
