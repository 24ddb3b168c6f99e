//! The normalized-domain model quantizer and its Monte Carlo metrics.

use rayon::prelude::*;

use super::sampler::Sampler;
use crate::error::{Error, Result};
use crate::formats::FP4_MAGNITUDES;
use crate::metrics::mean_stderr;

/// Symmetric grid in `[-1, 1]` containing 0 and ±1, stored as its
/// non-negative magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrid {
    levels: Vec<f64>,
    mids: Vec<f64>,
}

impl ModelGrid {
    /// Builds the grid `{0} ∪ ±positive`. `positive` must lie in `(0, 1]` and contain 1.
    pub fn new(positive: &[f64]) -> Result<Self> {
        let mut levels = vec![0.0];
        levels.extend_from_slice(positive);
        if levels.iter().any(|v| !(v.is_finite() && (0.0..=1.0).contains(v))) {
            return Err(Error::InvalidArgument("grid levels must lie in [0, 1]".into()));
        }
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        if levels.last() != Some(&1.0) || levels.len() < 2 {
            return Err(Error::InvalidArgument("grid must contain 1".into()));
        }
        let mids = levels.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Ok(Self { levels, mids })
    }

    /// E2M1 magnitudes divided by 6.
    pub fn e2m1() -> Self {
        let pos: Vec<f64> = FP4_MAGNITUDES[1..].iter().map(|v| v / 6.0).collect();
        Self::new(&pos).expect("valid")
    }

    /// `{0, ±2δ, ±1}`, or `{0, ±1}` when `δ = 1/2`.
    pub fn dead_zone(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 0.5) {
            return Err(Error::InvalidArgument(format!("delta must be in (0, 1/2], got {delta}")));
        }
        if delta == 0.5 {
            Self::new(&[1.0])
        } else {
            Self::new(&[2.0 * delta, 1.0])
        }
    }

    /// Non-negative levels, ascending, starting at 0 and ending at 1.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn q_min(&self) -> f64 {
        self.levels[1]
    }

    /// Dead-zone half-width `q_min / 2`.
    pub fn delta(&self) -> f64 {
        self.q_min() / 2.0
    }

    /// Nearest level; ties go to the lower magnitude. Saturates at ±1.
    pub fn round(&self, u: f64) -> f64 {
        let a = u.abs();
        let i = self.mids.partition_point(|&m| m < a);
        let q = self.levels[i];
        if u < 0.0 {
            -q
        } else {
            q
        }
    }
}

/// Unnormalized Walsh–Hadamard transform; applied twice it scales by `n`.
fn fwht(a: &mut [f64]) {
    let n = a.len();
    let mut h = 1;
    while h < n {
        for i in (0..n).step_by(2 * h) {
            for j in i..i + h {
                let (x, y) = (a[j], a[j + h]);
                a[j] = x + y;
                a[j + h] = x - y;
            }
        }
        h *= 2;
    }
}

fn quantize_in_place(block: &mut [f64], grid: &ModelGrid, rotate: bool) {
    let norm = (block.len() as f64).sqrt().recip();
    if rotate {
        fwht(block);
        block.iter_mut().for_each(|v| *v *= norm);
    }
    let s = block.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if s == 0.0 {
        block.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for v in block.iter_mut() {
        *v = s * grid.round(*v / s);
    }
    if rotate {
        fwht(block);
        block.iter_mut().for_each(|v| *v *= norm);
    }
}

/// Absmax-normalizes (after an optional normalized Hadamard rotation), rounds
/// onto the grid, rescales and rotates back.
pub fn model_quantize_block(block: &[f64], grid: &ModelGrid, rotate: bool) -> Result<Vec<f64>> {
    if rotate && !block.len().is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "rotation needs a power-of-two block, got {}",
            block.len()
        )));
    }
    if block.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut out = block.to_vec();
    quantize_in_place(&mut out, grid, rotate);
    Ok(out)
}

/// Monte Carlo estimates over i.i.d. blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    /// Per-element squared error.
    pub mse: f64,
    pub mse_stderr: f64,
    /// Squared error on each block's original largest-magnitude coordinate.
    pub mse_top: f64,
    pub mse_top_stderr: f64,
    /// Total squared error over total squared norm.
    pub mse_rel: f64,
    pub mse_rel_stderr: f64,
    /// Mean relative squared error on the original top coordinate.
    pub mse_top_rel: f64,
    pub mse_top_rel_stderr: f64,
    /// Standard error of `mse_top - mse`, paired per block.
    pub top_minus_mse_stderr: f64,
    /// `1 - mse`.
    pub preserved_mass: f64,
    pub block_count: usize,
}

pub(super) struct BlockStats {
    pub err: f64,
    pub norm: f64,
    pub top_err: f64,
    pub top_rel: f64,
}

fn block_stats(sampler: &Sampler, g: usize, grid: &ModelGrid, rotate: bool, index: u64, x: &mut Vec<f64>, q: &mut Vec<f64>) -> BlockStats {
    x.resize(g, 0.0);
    sampler.fill_block(index, x);
    q.clear();
    q.extend_from_slice(x);
    quantize_in_place(q, grid, rotate);
    let mut top = 0;
    let mut err = 0.0;
    let mut norm = 0.0;
    for i in 0..g {
        if x[i].abs() > x[top].abs() {
            top = i;
        }
        err += (x[i] - q[i]).powi(2);
        norm += x[i] * x[i];
    }
    let top_err = (x[top] - q[top]).powi(2);
    BlockStats {
        err,
        norm,
        top_err,
        top_rel: if x[top] != 0.0 { top_err / (x[top] * x[top]) } else { 0.0 },
    }
}

pub(super) fn simulate(sampler: &Sampler, g: usize, grid: &ModelGrid, rotate: bool, n_blocks: usize) -> Vec<BlockStats> {
    (0..n_blocks as u64)
        .into_par_iter()
        .map_init(
            || (Vec::with_capacity(g), Vec::with_capacity(g)),
            |(x, q), i| block_stats(sampler, g, grid, rotate, i, x, q),
        )
        .collect()
}

pub fn estimate_metrics(sampler: &Sampler, g: usize, grid: &ModelGrid, rotate: bool, n_blocks: usize) -> Result<MetricsReport> {
    if g < 2 {
        return Err(Error::InvalidArgument(format!("blocks need at least 2 elements, got {g}")));
    }
    if rotate && !g.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("rotation needs a power-of-two block, got {g}")));
    }
    if n_blocks == 0 {
        return Err(Error::InvalidArgument("need at least one block".into()));
    }
    let stats = simulate(sampler, g, grid, rotate, n_blocks);
    let per_elem: Vec<f64> = stats.iter().map(|s| s.err / g as f64).collect();
    let tops: Vec<f64> = stats.iter().map(|s| s.top_err).collect();
    let top_rels: Vec<f64> = stats.iter().map(|s| s.top_rel).collect();
    let diffs: Vec<f64> = stats.iter().map(|s| s.top_err - s.err / g as f64).collect();
    let errs: Vec<f64> = stats.iter().map(|s| s.err).collect();
    let norms: Vec<f64> = stats.iter().map(|s| s.norm).collect();

    let (mse, mse_stderr) = mean_stderr(&per_elem);
    let (mse_top, mse_top_stderr) = mean_stderr(&tops);
    let (mse_top_rel, mse_top_rel_stderr) = mean_stderr(&top_rels);
    let (_, top_minus_mse_stderr) = mean_stderr(&diffs);
    let rel = crate::metrics::ErrorStats::from_blocks(&errs, &norms, &[]);
    Ok(MetricsReport {
        mse,
        mse_stderr,
        mse_top,
        mse_top_stderr,
        mse_rel: rel.mse_rel,
        mse_rel_stderr: rel.mse_rel_stderr,
        mse_top_rel,
        mse_top_rel_stderr,
        top_minus_mse_stderr,
        preserved_mass: 1.0 - mse,
        block_count: n_blocks,
    })
}
