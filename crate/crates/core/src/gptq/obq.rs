use ndarray::Array2;

use super::linalg::gauss_jordan_inverse;
use crate::error::{Error, Result};
use crate::formats::Fp4Code;
use crate::quantizers::quantize_elem;

/// Slow reference: quantizes columns in `order`, re-inverting the Hessian of
/// the not-yet-quantized columns from scratch at every step and applying the
/// optimal compensation `Δw_R = -ε · [H_R⁻¹]_{:,j} / [H_R⁻¹]_{jj}`.
///
/// `scales[r][g]` is the effective scale of group `g` in row `r`. Returns the
/// element codes row-major in the original column order. Cost is `O(d⁴)`.
pub fn obq_fixed_order(
    w: &Array2<f64>,
    h: &Array2<f64>,
    scales: &Array2<f64>,
    group_size: usize,
    order: &[usize],
) -> Result<Vec<Fp4Code>> {
    let (rows, cols) = w.dim();
    if h.dim() != (cols, cols) || order.len() != cols || scales.dim() != (rows, cols / group_size.max(1)) {
        return Err(Error::Shape("oracle inputs disagree on dimensions".into()));
    }
    let mut w = w.clone();
    let mut codes = vec![Fp4Code::ZERO; rows * cols];
    for (step, &j) in order.iter().enumerate() {
        let remaining = &order[step..];
        let sub = Array2::from_shape_fn((remaining.len(), remaining.len()), |(a, b)| {
            h[[remaining[a], remaining[b]]]
        });
        let inv = gauss_jordan_inverse(&sub, step)?;
        for r in 0..rows {
            let eff = scales[[r, j / group_size]];
            let code = quantize_elem(w[[r, j]], eff);
            let eps = w[[r, j]] - eff * code.decode();
            codes[r * cols + j] = code;
            w[[r, j]] -= eps;
            for (a, &k) in remaining.iter().enumerate().skip(1) {
                w[[r, k]] -= eps * inv[[a, 0]] / inv[[0, 0]];
            }
        }
    }
    Ok(codes)
}
