use ndarray::Array2;

use super::model::{simulate, ModelGrid};
use super::sampler::{Distribution, Sampler};
use crate::error::{Error, Result};
use crate::formats::{FormatSpec, ScaleFormat};
use crate::metrics::{mean_stderr, pairwise_sum};
use crate::quantizers::{quantize_rtn, ScalePolicy};
use crate::transforms::TransformSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub g: usize,
    /// Preserved mass `R(G) = 1 - MSE(G)`.
    pub r: f64,
    pub stderr: f64,
    /// `ln(R / correction(G))`.
    pub corrected_log_r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `corrected_log_r` against `ln G`.
    pub slope: f64,
}

/// Logarithmic factor divided out of `R(G)` before the regression:
/// `(ln G)²` for Laplace, `√(ln G)` for Normal.
pub fn rate_correction(kind: Distribution, g: usize) -> f64 {
    let l = (g as f64).ln();
    match kind {
        Distribution::LaplaceUnitVar => l * l,
        Distribution::StdNormal => l.sqrt(),
    }
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Estimates `R(G)` for each group size from about `n_total` samples and
/// regresses the log-corrected values on `ln G`.
///
/// Per block the estimator averages `x² - (x - x̂)²`, which has the same
/// expectation as `1 - (x - x̂)²` under unit variance but far less noise once
/// most of the mass is dead-zoned.
pub fn rate_experiment(sampler: &Sampler, grid: &ModelGrid, g_list: &[usize], n_total: usize) -> Result<RateTable> {
    if g_list.is_empty() || g_list.windows(2).any(|w| w[0] >= w[1]) || g_list[0] < 2 {
        return Err(Error::InvalidArgument("group sizes must be ascending and at least 2".into()));
    }
    let mut rows = Vec::with_capacity(g_list.len());
    for &g in g_list {
        let n_blocks = (n_total / g).max(2);
        let stats = simulate(&sampler.derive(g as u64), g, grid, false, n_blocks);
        let kept: Vec<f64> = stats.iter().map(|s| (s.norm - s.err) / g as f64).collect();
        let (r, stderr) = mean_stderr(&kept);
        rows.push(RateRow {
            g,
            r,
            stderr,
            corrected_log_r: (r / rate_correction(sampler.kind, g)).ln(),
        });
    }
    let slope = if rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|r| (r.g as f64).ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.corrected_log_r).collect();
        ols_slope(&xs, &ys)
    } else {
        f64::NAN
    };
    Ok(RateTable { rows, slope })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSweepRow {
    pub g: usize,
    pub hadamard: bool,
    pub mse_rel: f64,
    pub mse_rel_stderr: f64,
    pub mse_top_rel: f64,
    pub mse_top_rel_stderr: f64,
}

/// Format spec for a scale format in the sweeps: minifloat scales get a
/// tensor scale, the others do not. E8M0 uses the 4/3 rule via the default policy.
pub fn spec_for_scale(scale: ScaleFormat, group_size: usize) -> Result<FormatSpec> {
    FormatSpec::new(group_size, scale, matches!(scale, ScaleFormat::Fp(_)))
}

/// RTN with absmax scales at each group size, without and with a Hadamard
/// rotation of size `G`.
pub fn sweep_groups(x: &Array2<f32>, scale: ScaleFormat, g_list: &[usize]) -> Result<Vec<GroupSweepRow>> {
    let mut out = Vec::new();
    for &g in g_list {
        let spec = spec_for_scale(scale, g)?;
        let policy = ScalePolicy::for_spec(&spec);
        for hadamard in [false, true] {
            let t = if hadamard { Some(TransformSpec::hadamard(g)?) } else { None };
            let r = quantize_rtn(x, &spec, &policy, t)?;
            out.push(GroupSweepRow {
                g,
                hadamard,
                mse_rel: r.mse_rel,
                mse_rel_stderr: r.stats.mse_rel_stderr,
                mse_top_rel: r.mse_top_rel,
                mse_top_rel_stderr: r.stats.mse_top_rel_stderr,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormatSweepRow {
    pub format: ScaleFormat,
    pub mse_rel: f64,
    pub mse_rel_stderr: f64,
    pub mse_top_rel: f64,
}

/// RTN with absmax scales under each scale format at a fixed group size.
pub fn sweep_scale_formats(x: &Array2<f32>, group_size: usize, formats: &[ScaleFormat]) -> Result<Vec<FormatSweepRow>> {
    if formats.is_empty() {
        return Err(Error::InvalidArgument("no scale formats given".into()));
    }
    formats
        .iter()
        .map(|&format| {
            let spec = spec_for_scale(format, group_size)?;
            let r = quantize_rtn(x, &spec, &ScalePolicy::for_spec(&spec), None)?;
            Ok(FormatSweepRow {
                format,
                mse_rel: r.mse_rel,
                mse_rel_stderr: r.stats.mse_rel_stderr,
                mse_top_rel: r.mse_top_rel,
            })
        })
        .collect()
}

/// Mean of `(x - x̂)² / x²` over the `⌊p · n⌋` largest-magnitude elements.
pub fn outlier_mape(x: &Array2<f32>, x_hat: &Array2<f32>, p: f64) -> Result<f64> {
    if x.dim() != x_hat.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", x.dim(), x_hat.dim())));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("outlier fraction must be in (0, 1), got {p}")));
    }
    let n = x.len();
    let k = (p * n as f64).floor() as usize;
    if k < 1 {
        return Err(Error::InvalidArgument(format!(
            "outlier fraction {p} selects no element out of {n}"
        )));
    }
    let xs: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let hs: Vec<f64> = x_hat.iter().map(|&v| v as f64).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[b].abs().total_cmp(&xs[a].abs()));
    let terms: Vec<f64> = idx[..k]
        .iter()
        .map(|&i| {
            let e = (xs[i] - hs[i]).powi(2);
            if e == 0.0 {
                0.0
            } else {
                e / (xs[i] * xs[i])
            }
        })
        .collect();
    Ok(pairwise_sum(&terms) / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KurtosisReport {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub excess_kurtosis: f64,
    /// Laplace MLE: location (median) and scale (mean absolute deviation).
    pub laplace_loc: f64,
    pub laplace_scale: f64,
    pub laplace_loglik: f64,
    /// Normal MLE.
    pub normal_mean: f64,
    pub normal_std: f64,
    pub normal_loglik: f64,
}

pub const MIN_KURTOSIS_SAMPLES: usize = 1000;

/// Moments and maximum-likelihood Laplace and Normal fits.
pub fn kurtosis_report(x: &[f64]) -> Result<KurtosisReport> {
    let n = x.len();
    if n < MIN_KURTOSIS_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_KURTOSIS_SAMPLES} samples, got {n}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let nf = n as f64;
    let mean = pairwise_sum(x) / nf;
    let d2: Vec<f64> = x.iter().map(|v| (v - mean).powi(2)).collect();
    let d4: Vec<f64> = d2.iter().map(|v| v * v).collect();
    let m2 = pairwise_sum(&d2) / nf;
    if m2 == 0.0 {
        return Err(Error::InvalidArgument("zero variance".into()));
    }
    let m4 = pairwise_sum(&d4) / nf;

    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let abs_dev: Vec<f64> = x.iter().map(|v| (v - median).abs()).collect();
    let b = pairwise_sum(&abs_dev) / nf;
    let laplace_loglik = -nf * ((2.0 * b).ln() + 1.0);
    let normal_loglik = -0.5 * nf * ((2.0 * std::f64::consts::PI * m2).ln() + 1.0);
    Ok(KurtosisReport {
        n,
        mean,
        variance: m2 * nf / (nf - 1.0),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
        laplace_loc: median,
        laplace_scale: b,
        laplace_loglik,
        normal_mean: mean,
        normal_std: m2.sqrt(),
        normal_loglik,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::oracle::{model_mse, Density};
    use crate::transforms::{apply_blockwise, Direction};

    #[test]
    fn rate_rows_match_quadrature() {
        let grid = ModelGrid::dead_zone(0.25).unwrap();
        for (kind, d) in [(Distribution::LaplaceUnitVar, Density::Laplace), (Distribution::StdNormal, Density::Normal)] {
            let t = rate_experiment(&Sampler::new(kind, 5), &grid, &[64, 256, 1024], 2_000_000).unwrap();
            for row in &t.rows {
                let want = 1.0 - model_mse(d, row.g, &grid);
                assert!((row.r - want).abs() <= 4.0 * row.stderr, "{kind:?} G={} {} vs {want}", row.g, row.r);
            }
            assert!(t.slope.is_finite());
        }
    }

    #[test]
    fn slope_of_exact_power_law() {
        let xs: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.ln()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.7 - 0.25 * x).collect();
        assert!((ols_slope(&xs, &ys) + 0.25).abs() < 1e-14);
    }

    #[test]
    fn rate_input_validation() {
        let grid = ModelGrid::dead_zone(0.25).unwrap();
        let s = Sampler::new(Distribution::StdNormal, 1);
        assert!(rate_experiment(&s, &grid, &[64, 32], 1000).is_err());
        assert!(rate_experiment(&s, &grid, &[], 1000).is_err());
    }

    #[test]
    fn outlier_mape_cases() {
        let x = Sampler::new(Distribution::LaplaceUnitVar, 2).sample_matrix(4, 64);
        assert_eq!(outlier_mape(&x, &x, 0.1).unwrap(), 0.0);
        assert!(outlier_mape(&x, &x, 1e-4).is_err());
        assert!(outlier_mape(&x, &x, 0.0).is_err());
        let flat = Array2::from_shape_fn((2, 8), |(i, j)| if (i + j) % 2 == 0 { 2.0f32 } else { -2.0 });
        let noisy = flat.mapv(|v| v * 0.75);
        let stats = crate::metrics::ErrorStats::compute(flat.mapv(f64::from).view(), noisy.mapv(f64::from).view(), 8);
        assert!((outlier_mape(&flat, &noisy, 0.5).unwrap() - stats.mse_rel).abs() < 1e-15);
    }

    #[test]
    fn kurtosis_of_known_distributions() {
        let l = Sampler::new(Distribution::LaplaceUnitVar, 3).sample_blocks(1000, 1000).unwrap();
        let n = Sampler::new(Distribution::StdNormal, 3).sample_blocks(1000, 1000).unwrap();
        let rl = kurtosis_report(l.as_slice().unwrap()).unwrap();
        let rn = kurtosis_report(n.as_slice().unwrap()).unwrap();
        assert!((rl.excess_kurtosis - 3.0).abs() < 0.2, "{}", rl.excess_kurtosis);
        assert!(rn.excess_kurtosis.abs() < 0.05, "{}", rn.excess_kurtosis);
        assert!(rl.laplace_loglik > rl.normal_loglik);
        assert!(rn.normal_loglik > rn.laplace_loglik);
        assert!((rl.laplace_scale - 0.5f64.sqrt()).abs() < 0.01);
        assert!(kurtosis_report(&[1.0; 2000]).is_err());
        assert!(kurtosis_report(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn rotation_gaussianizes_laplace() {
        let x = Sampler::new(Distribution::LaplaceUnitVar, 4).sample_matrix(2000, 256);
        let y = apply_blockwise(&x, TransformSpec::hadamard(128).unwrap(), Direction::Forward).unwrap();
        let kx = kurtosis_report(&x.iter().map(|&v| v as f64).collect::<Vec<_>>()).unwrap();
        let ky = kurtosis_report(&y.iter().map(|&v| v as f64).collect::<Vec<_>>()).unwrap();
        assert!(ky.excess_kurtosis > 0.0 && ky.excess_kurtosis < 3.0);
        assert!(ky.excess_kurtosis < 0.2 && kx.excess_kurtosis > 2.5, "{} {}", kx.excess_kurtosis, ky.excess_kurtosis);
    }

    #[test]
    fn sweep_determinism_and_baseline() {
        let x = Sampler::new(Distribution::LaplaceUnitVar, 6).sample_matrix(64, 256);
        let formats = [ScaleFormat::Unquantized, ScaleFormat::E4M3, ScaleFormat::E8M0, ScaleFormat::E4M3];
        let rows = sweep_scale_formats(&x, 16, &formats).unwrap();
        assert_eq!(rows[1], rows[3]);
        assert!(rows.iter().all(|r| r.mse_rel >= rows[0].mse_rel));
        assert!(sweep_scale_formats(&x, 16, &[]).is_err());
        let g = sweep_groups(&x, ScaleFormat::E4M3, &[16, 32]).unwrap();
        assert_eq!(g.len(), 4);
    }
}
