//! Per-group scale planning: absmax initialization, the tensor scale, scale
//! code rounding and the alternating MSE search.

use ndarray::Array2;
use rayon::prelude::*;

use super::{ScaleFitting, ScaleMode, ScalePolicy};
use crate::error::{Error, Result};
use crate::formats::{exp2i, floor_log2, Fp4Code, FormatSpec, ScaleCodec, ScaleFit, ScaleFormat, FP4_MAX};

/// Candidate multipliers for the MSE search, evaluated after the incumbent.
pub(crate) const MSE_CANDIDATES: usize = 128;
pub(crate) const MSE_LO: f64 = 0.5;
pub(crate) const MSE_HI: f64 = 1.2;
pub(crate) const MSE_ROUNDS: usize = 3;
const MSE_REL_TOL: f64 = 1e-12;
/// Significant bits kept in the tensor scale.
const TENSOR_SCALE_BITS: i32 = 16;

pub(crate) fn mse_multiplier(j: usize) -> f64 {
    MSE_LO + (MSE_HI - MSE_LO) * j as f64 / (MSE_CANDIDATES - 1) as f64
}

pub(crate) fn quantize_elem(x: f64, eff: f64) -> Fp4Code {
    if eff == 0.0 {
        Fp4Code::ZERO
    } else {
        Fp4Code::encode_saturating(x / eff)
    }
}

pub(crate) fn group_sse(xs: &[f64], eff: f64) -> f64 {
    xs.iter()
        .map(|&x| (x - eff * quantize_elem(x, eff).decode()).powi(2))
        .sum()
}

fn absmax(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Largest scale the format can hold, used to place the tensor scale.
fn scale_ceiling(fmt: &ScaleFormat) -> f64 {
    match fmt {
        ScaleFormat::Fp(f) => f.max_value(),
        ScaleFormat::Int8Linear { range: Some((_, hi)) } => *hi,
        _ => 1.0,
    }
}

/// Rounds up to [`TENSOR_SCALE_BITS`] significant bits, within f32 range.
///
/// With the short mantissa, `s_T · scale · element` is exact in f32, so
/// dequantized tensors re-quantize to the same codes.
fn round_up_tensor_scale(t: f64) -> f32 {
    let t = t.clamp(f32::MIN_POSITIVE as f64, f32::MAX as f64);
    let q = exp2i(floor_log2(t) - (TENSOR_SCALE_BITS - 1));
    let v = (t / q).ceil() * q;
    (v as f32).min(f32::MAX)
}

/// Fits the fitted-grid map so the smallest scale gets code 0 and the largest code 255.
pub fn fit_e8m0_range(scales: &[f64]) -> Result<ScaleFit> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("scale fit needs at least one scale".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &s in scales {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidScale(s));
        }
        lo = lo.min(s);
        hi = hi.max(s);
    }
    let beta = lo.log2();
    ScaleFit::new((hi.log2() - beta) / 255.0, beta)
}

/// Group scales of one matrix, frozen before any element is rounded.
#[derive(Debug, Clone)]
pub(crate) struct GroupScales {
    pub codec: ScaleCodec,
    pub tensor_scale: f32,
    pub group_size: usize,
    pub groups_per_row: usize,
    pub codes: Vec<u64>,
    /// `s_T · decode(code)` per group.
    pub effective: Vec<f64>,
}

impl GroupScales {
    fn refresh_effective(&mut self) {
        let st = self.tensor_scale as f64;
        let codec = self.codec;
        self.effective = self
            .codes
            .iter()
            .map(|&c| st * codec.decode(c).expect("encoder output decodes"))
            .collect();
    }

    /// `x` is the (already transformed) matrix in standard layout.
    pub fn plan(x: &Array2<f64>, spec: &FormatSpec, policy: &ScalePolicy) -> Result<Self> {
        spec.check_cols(x.ncols())?;
        let g = spec.group_size;
        let data = x.as_slice().expect("standard layout");
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let absmaxes: Vec<f64> = data.chunks(g).map(absmax).collect();

        let tensor_scale = if spec.global_scale {
            let top = absmaxes.iter().fold(0.0f64, |m, &v| m.max(v));
            if top == 0.0 {
                1.0
            } else {
                round_up_tensor_scale(top / (FP4_MAX * scale_ceiling(&spec.scale)))
            }
        } else {
            let s = policy.tensor_scale;
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidScale(s as f64));
            }
            s
        };

        let raw = raw_scales(&absmaxes, tensor_scale);
        let nonzero: Vec<f64> = absmaxes
            .iter()
            .zip(&raw)
            .filter(|(a, _)| **a > 0.0)
            .map(|(_, r)| *r)
            .collect();

        let fit = match policy.scale_fit {
            ScaleFitting::Off => None,
            ScaleFitting::Fixed(f) => Some(f),
            ScaleFitting::FromData if nonzero.is_empty() => Some(ScaleFit::new(0.0, 0.0)?),
            ScaleFitting::FromData => Some(fit_e8m0_range(&nonzero)?),
        };
        let format = match spec.scale {
            ScaleFormat::Int8Linear { range: None } => {
                let lo = nonzero.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = nonzero.iter().copied().fold(0.0, f64::max);
                let range = if nonzero.is_empty() { (1.0, 1.0) } else { (lo, hi) };
                ScaleFormat::Int8Linear { range: Some(range) }
            }
            other => other,
        };
        let codec = ScaleCodec {
            format,
            four_thirds: policy.four_thirds && fit.is_none(),
            fit,
        };
        codec.validate()?;

        let codes = raw.iter().map(|&r| codec.encode(r)).collect::<Result<Vec<_>>>()?;
        let mut scales = Self {
            codec,
            tensor_scale,
            group_size: g,
            groups_per_row: x.ncols() / g,
            codes,
            effective: Vec::new(),
        };
        scales.refresh_effective();
        if policy.mode == ScaleMode::MseOptimized {
            scales.mse_search(data, &absmaxes, spec.global_scale)?;
        }
        Ok(scales)
    }

    fn total_sse(&self, data: &[f64]) -> f64 {
        let g = self.group_size;
        let per: Vec<f64> = data
            .par_chunks(g)
            .zip(self.effective.par_iter())
            .map(|(xs, &eff)| group_sse(xs, eff))
            .collect();
        crate::metrics::pairwise_sum(&per)
    }

    /// Alternates per-group multiplier scans with a tensor-scale scan. Every
    /// scan keeps its incumbent unless a candidate is strictly better, so the
    /// result never loses to the absmax initialization.
    fn mse_search(&mut self, data: &[f64], absmaxes: &[f64], global: bool) -> Result<()> {
        let g = self.group_size;
        let mut best = self.total_sse(data);
        for _ in 0..MSE_ROUNDS {
            let before = best;
            let raw = raw_scales(absmaxes, self.tensor_scale);
            let st = self.tensor_scale as f64;
            let codec = self.codec;
            let updated: Vec<u64> = data
                .par_chunks(g)
                .zip(raw.par_iter())
                .zip(self.codes.par_iter())
                .zip(absmaxes.par_iter())
                .map(|(((xs, &r), &code), &a)| {
                    if a == 0.0 {
                        code
                    } else {
                        best_group_code(xs, r, code, st, &codec)
                    }
                })
                .collect();
            self.codes = updated;
            self.refresh_effective();
            best = self.total_sse(data);

            if global {
                let base = self.tensor_scale;
                let mut best_st = base;
                for j in 0..MSE_CANDIDATES {
                    let cand = (base as f64 * mse_multiplier(j)) as f32;
                    if cand == best_st || !(cand > 0.0 && cand.is_finite()) {
                        continue;
                    }
                    self.tensor_scale = cand;
                    self.refresh_effective();
                    let sse = self.total_sse(data);
                    if sse < best {
                        best = sse;
                        best_st = cand;
                    }
                }
                self.tensor_scale = best_st;
                self.refresh_effective();
            }

            if best == 0.0 || (before - best) <= MSE_REL_TOL * before {
                break;
            }
        }
        Ok(())
    }
}

fn raw_scales(absmaxes: &[f64], tensor_scale: f32) -> Vec<f64> {
    let st = tensor_scale as f64;
    absmaxes
        .iter()
        .map(|&a| if a == 0.0 { 1.0 } else { a / FP4_MAX / st })
        .collect()
}

/// Scans `incumbent` then codes for `raw · m_j`, keeping the first strict minimum.
pub(crate) fn best_group_code(xs: &[f64], raw: f64, incumbent: u64, st: f64, codec: &ScaleCodec) -> u64 {
    let eval = |code: u64| group_sse(xs, st * codec.decode(code).expect("encoder output decodes"));
    let mut best_code = incumbent;
    let mut best = eval(incumbent);
    let mut prev = None;
    for j in 0..MSE_CANDIDATES {
        let Ok(code) = codec.encode(raw * mse_multiplier(j)) else {
            continue;
        };
        if prev == Some(code) {
            continue;
        }
        prev = Some(code);
        let sse = eval(code);
        if sse < best {
            best = sse;
            best_code = code;
        }
    }
    best_code
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_scale_rounding() {
        let t = 4.2 / 2688.0;
        let s = round_up_tensor_scale(t);
        assert!(s as f64 >= t);
        assert!((s as f64 - t) / t < 2f64.powi(-15));
        let bits = s.to_bits() & 0x7f_ffff;
        assert_eq!(bits & ((1 << 8) - 1), 0, "only 16 significant bits");
        assert_eq!(round_up_tensor_scale(1.0), 1.0);
    }

    #[test]
    fn fit_endpoints() {
        let f = fit_e8m0_range(&[1.0, 2.0]).unwrap();
        assert_eq!(f.alpha, 1.0 / 255.0);
        assert_eq!(f.beta, 0.0);
        let f = fit_e8m0_range(&[0.3, 0.05, 7.0]).unwrap();
        assert_eq!(f.encode(0.05).unwrap(), 0);
        assert_eq!(f.encode(7.0).unwrap(), 255);
        let flat = fit_e8m0_range(&[0.7, 0.7]).unwrap();
        assert_eq!(flat.alpha, 0.0);
        assert_eq!(flat.decode(flat.encode(0.7).unwrap()), 0.7f64.log2().exp2());
        assert!(fit_e8m0_range(&[]).is_err());
        assert!(fit_e8m0_range(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn multiplier_grid_endpoints() {
        assert_eq!(mse_multiplier(0), 0.5);
        assert!((mse_multiplier(MSE_CANDIDATES - 1) - 1.2).abs() < 1e-15);
    }
}
