//! GPTQ weight quantization, its MR variant, and a fixed-order OBQ oracle.
//!
//! Weights `W` are `d_row × d_col`; calibration activations `X` are
//! `n × d_col`, so the layer output is `X Wᵀ` and the Hessian is over columns.

mod linalg;
mod obq;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formats::{Fp4Code, FormatSpec, MfpTensor, ScaleFormat};
use crate::quantizers::{
    forward, meta_for, quantize_elem, resolved_spec, to_f64, GroupScales, QuantResult, ScaleFitting, ScaleMode,
    ScalePolicy,
};
use crate::transforms::{conjugate_hessian, TransformSpec};

pub use obq::obq_fixed_order;

/// Running sum of `2 XᵀX` over calibration batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Hessian {
    matrix: Array2<f64>,
    count: usize,
}

impl Hessian {
    pub fn new(dim: usize) -> Self {
        Self {
            matrix: Array2::zeros((dim, dim)),
            count: 0,
        }
    }

    /// Wraps an already-normalized symmetric matrix.
    pub fn from_matrix(matrix: Array2<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::Shape(format!("hessian must be square, got {:?}", matrix.dim())));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let scale = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..n {
            if matrix[[i, i]] < 0.0 {
                return Err(Error::InvalidArgument(format!("negative hessian diagonal at {i}")));
            }
            for j in 0..i {
                if (matrix[[i, j]] - matrix[[j, i]]).abs() > 1e-8 * scale {
                    return Err(Error::InvalidArgument("hessian is not symmetric".into()));
                }
            }
        }
        Ok(Self { matrix, count: 1 })
    }

    /// Sum of `2 XᵀX` for `x` with `n` rows and `dim` columns.
    pub fn from_activations(x: &Array2<f32>) -> Result<Self> {
        let mut h = Self::new(x.ncols());
        h.accumulate(x)?;
        Ok(h)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn sample_count(&self) -> usize {
        self.count
    }

    /// Unnormalized accumulated matrix.
    pub fn raw(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn accumulate(&mut self, batch: &Array2<f32>) -> Result<()> {
        if batch.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "calibration batch has {} columns, hessian expects {}",
                batch.ncols(),
                self.dim()
            )));
        }
        let x = to_f64(batch);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        self.matrix.scaled_add(2.0, &x.t().dot(&x));
        self.count += batch.nrows();
        Ok(())
    }

    /// Accumulated matrix divided by the sample count.
    pub fn finalized(&self) -> Array2<f64> {
        if self.count == 0 {
            self.matrix.clone()
        } else {
            &self.matrix / self.count as f64
        }
    }
}

/// Columns sorted by descending Hessian diagonal, ties by ascending index.
pub fn static_act_order(h: &Hessian) -> Vec<usize> {
    order_by_diagonal(&h.finalized())
}

fn order_by_diagonal(h: &Array2<f64>) -> Vec<usize> {
    let diag = h.diag();
    let mut perm: Vec<usize> = (0..h.nrows()).collect();
    perm.sort_by(|&a, &b| diag[b].total_cmp(&diag[a]));
    perm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GptqConfig {
    /// Fraction of the mean Hessian diagonal added to the diagonal.
    pub dampening: f64,
    /// Columns per lazy error-propagation block.
    pub block_width: usize,
    pub act_order: bool,
    pub scale_policy: ScalePolicy,
    pub transform: Option<TransformSpec>,
}

impl GptqConfig {
    pub fn for_spec(spec: &FormatSpec) -> Self {
        Self {
            dampening: 1e-2,
            block_width: 128,
            act_order: false,
            scale_policy: ScalePolicy::for_spec(spec),
            transform: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dampening > 0.0 && self.dampening.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dampening must be positive, got {}",
                self.dampening
            )));
        }
        if self.block_width == 0 {
            return Err(Error::InvalidArgument("block width must be positive".into()));
        }
        Ok(())
    }
}

/// Everything GPTQ fixes before the column loop. Exposed so the oracle can be
/// run on exactly the same problem.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Weights in the quantization domain (transformed if configured).
    pub weights: Array2<f64>,
    /// Hessian in the quantization domain, dead columns repaired and dampened.
    pub hessian: Array2<f64>,
    /// Effective (`s_T · decoded`) scale per row and group.
    pub scales: Array2<f64>,
    /// Column processing order.
    pub order: Vec<usize>,
    group_scales: GroupScales,
}

pub fn prepare(w: &Array2<f32>, h: &Hessian, spec: &FormatSpec, cfg: &GptqConfig) -> Result<Prepared> {
    cfg.validate()?;
    let w64 = to_f64(w);
    if w64.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if h.dim() != w.ncols() {
        return Err(Error::Shape(format!(
            "hessian is {0}x{0} but weights have {1} columns",
            h.dim(),
            w.ncols()
        )));
    }
    spec.check_cols(w.ncols())?;
    let weights = forward(&w64, cfg.transform)?;
    let mut hm = h.finalized();
    if let Some(t) = cfg.transform {
        hm = conjugate_hessian(&hm, t)?;
    }
    let order = if cfg.act_order {
        order_by_diagonal(&hm)
    } else {
        (0..hm.nrows()).collect()
    };

    let n = hm.nrows();
    if n > 0 {
        let diag: Array1<f64> = hm.diag().to_owned();
        let mean = diag.mean().unwrap_or(0.0);
        let fill = if mean > 0.0 { mean } else { 1.0 };
        for i in 0..n {
            if diag[i] <= 0.0 {
                hm[[i, i]] = fill;
            }
        }
        let damp = cfg.dampening * hm.diag().mean().expect("non-empty");
        for i in 0..n {
            hm[[i, i]] += damp;
        }
    }

    let group_scales = GroupScales::plan(&weights, spec, &cfg.scale_policy)?;
    let scales = Array2::from_shape_vec(
        (weights.nrows(), group_scales.groups_per_row),
        group_scales.effective.clone(),
    )
    .expect("one scale per group");
    Ok(Prepared {
        weights,
        hessian: hm,
        scales,
        order,
        group_scales,
    })
}

/// GPTQ over all rows with the prepared order, scales and Hessian.
pub fn gptq_quantize(w: &Array2<f32>, h: &Hessian, spec: &FormatSpec, cfg: &GptqConfig) -> Result<QuantResult> {
    let p = prepare(w, h, spec, cfg)?;
    let codes = run_columns(&p, spec.group_size, cfg.block_width)?;
    let mut meta = meta_for(&p.group_scales, &cfg.scale_policy, cfg.transform);
    if cfg.act_order {
        meta.permutation = Some(p.order.clone());
    }
    let tensor = MfpTensor::pack(
        resolved_spec(spec, &p.group_scales),
        p.weights.dim(),
        &codes,
        p.group_scales.codes.clone(),
        meta,
    )?;
    Ok(QuantResult::evaluate(tensor, &to_f64(w)))
}

fn run_columns(p: &Prepared, group_size: usize, block_width: usize) -> Result<Vec<Fp4Code>> {
    let order = &p.order;
    let d = order.len();
    let hp = Array2::from_shape_fn((d, d), |(i, j)| p.hessian[[order[i], order[j]]]);
    let u = linalg::upper_inverse_factor(&hp)?;
    let (rows, cols) = p.weights.dim();
    let mut out = vec![Fp4Code::ZERO; rows * cols];
    out.par_chunks_mut(cols.max(1))
        .zip(p.weights.as_slice().expect("standard layout").par_chunks(cols.max(1)))
        .zip(p.scales.as_slice().expect("standard layout").par_chunks(p.scales.ncols().max(1)))
        .for_each(|((dst, wrow), srow)| {
            let mut w: Vec<f64> = order.iter().map(|&c| wrow[c]).collect();
            let eff: Vec<f64> = order.iter().map(|&c| srow[c / group_size]).collect();
            let mut err = vec![0.0; d];
            let mut i1 = 0;
            while i1 < d {
                let i2 = (i1 + block_width).min(d);
                for j in i1..i2 {
                    let code = quantize_elem(w[j], eff[j]);
                    let q = eff[j] * code.decode();
                    dst[order[j]] = code;
                    let e = (w[j] - q) / u[[j, j]];
                    err[j] = e;
                    for k in j + 1..i2 {
                        w[k] -= e * u[[j, k]];
                    }
                }
                for k in i2..d {
                    let mut s = 0.0;
                    for j in i1..i2 {
                        s += err[j] * u[[j, k]];
                    }
                    w[k] -= s;
                }
                i1 = i2;
            }
        });
    Ok(out)
}

/// Overrides applied on top of [`GptqConfig`] by [`mr_gptq`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrGptqOptions {
    pub transform: Option<TransformSpec>,
    pub scale_mode: ScaleMode,
    pub scale_fit: ScaleFitting,
    pub dampening: f64,
    pub block_width: usize,
}

impl MrGptqOptions {
    /// E8M0 formats: Hadamard of size `min(G, 128)`, absmax with a fitted
    /// scale grid. Other formats: Hadamard of size `G` with MSE-searched scales.
    pub fn for_format(spec: &FormatSpec) -> Result<Self> {
        let (block, scale_mode, scale_fit) = if spec.scale == ScaleFormat::E8M0 {
            (spec.group_size.min(128), ScaleMode::AbsMax, ScaleFitting::FromData)
        } else {
            (spec.group_size, ScaleMode::MseOptimized, ScaleFitting::Off)
        };
        Ok(Self {
            transform: Some(TransformSpec::hadamard(block)?),
            scale_mode,
            scale_fit,
            dampening: 1e-2,
            block_width: 128,
        })
    }

    pub fn config(&self, spec: &FormatSpec) -> GptqConfig {
        let mut policy = ScalePolicy::for_spec(spec).with_mode(self.scale_mode).with_scale_fit(self.scale_fit);
        if self.scale_fit != ScaleFitting::Off {
            policy.four_thirds = false;
        }
        GptqConfig {
            dampening: self.dampening,
            block_width: self.block_width,
            act_order: true,
            scale_policy: policy,
            transform: self.transform,
        }
    }
}

/// GPTQ with block rotation, format-specific scale search and static
/// activation reordering.
pub fn mr_gptq(w: &Array2<f32>, h: &Hessian, spec: &FormatSpec, opts: &MrGptqOptions) -> Result<QuantResult> {
    gptq_quantize(w, h, spec, &opts.config(spec))
}

/// `‖X (Ŵ − W)ᵀ‖²_F` for original-domain weights.
pub fn proxy_loss(x: &Array2<f32>, w: &Array2<f32>, w_hat: &Array2<f32>) -> f64 {
    let diff = to_f64(w_hat) - to_f64(w);
    let y = to_f64(x).dot(&diff.t());
    y.iter().map(|v| v * v).sum()
}
