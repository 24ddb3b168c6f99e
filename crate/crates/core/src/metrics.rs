//! Reconstruction error statistics over groups.

use ndarray::ArrayView2;

/// Pairwise (cascade) summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Mean and standard error of the mean.
pub(crate) fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = pairwise_sum(v) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Errors of a reconstruction against its source, grouped into contiguous
/// row blocks of `group_size` elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    /// Total squared error over total squared norm.
    pub mse_rel: f64,
    /// Delta-method standard error of `mse_rel` across blocks.
    pub mse_rel_stderr: f64,
    /// Mean over blocks of the relative squared error on the block's
    /// largest-magnitude element. Blocks whose top element is zero are skipped.
    pub mse_top_rel: f64,
    pub mse_top_rel_stderr: f64,
    pub sse: f64,
    pub norm2: f64,
    pub blocks: usize,
}

impl ErrorStats {
    pub fn compute(x: ArrayView2<f64>, xhat: ArrayView2<f64>, group_size: usize) -> Self {
        assert_eq!(x.dim(), xhat.dim(), "shape mismatch");
        assert!(group_size > 0 && x.ncols() % group_size == 0);
        let mut errs = Vec::new();
        let mut norms = Vec::new();
        let mut tops = Vec::new();
        for (xr, hr) in x.rows().into_iter().zip(xhat.rows()) {
            let xr: Vec<f64> = xr.iter().copied().collect();
            let hr: Vec<f64> = hr.iter().copied().collect();
            for (xb, hb) in xr.chunks(group_size).zip(hr.chunks(group_size)) {
                let mut e = 0.0;
                let mut n = 0.0;
                let mut top = 0;
                for i in 0..xb.len() {
                    e += (xb[i] - hb[i]).powi(2);
                    n += xb[i] * xb[i];
                    if xb[i].abs() > xb[top].abs() {
                        top = i;
                    }
                }
                errs.push(e);
                norms.push(n);
                if xb[top] != 0.0 {
                    tops.push(((xb[top] - hb[top]) / xb[top]).powi(2));
                }
            }
        }
        Self::from_blocks(&errs, &norms, &tops)
    }

    pub(crate) fn from_blocks(errs: &[f64], norms: &[f64], tops: &[f64]) -> Self {
        let blocks = errs.len();
        let sse = pairwise_sum(errs);
        let norm2 = pairwise_sum(norms);
        let mse_rel = if norm2 > 0.0 { sse / norm2 } else { 0.0 };
        let mse_rel_stderr = if blocks > 1 && norm2 > 0.0 {
            let resid: Vec<f64> = errs
                .iter()
                .zip(norms)
                .map(|(e, n)| (e - mse_rel * n).powi(2))
                .collect();
            let mean_n = norm2 / blocks as f64;
            (pairwise_sum(&resid) / (blocks * (blocks - 1)) as f64).sqrt() / mean_n
        } else {
            0.0
        };
        let (mse_top_rel, mse_top_rel_stderr) = mean_stderr(tops);
        Self {
            mse_rel,
            mse_rel_stderr,
            mse_top_rel,
            mse_top_rel_stderr,
            sse,
            norm2,
            blocks,
        }
    }
}
