//! Deterministic quadrature for the model quantizer's per-element MSE.
//!
//! With unquantized absmax scales the block maximum is reconstructed exactly,
//! and conditional on the maximum `m` the other `G - 1` magnitudes are i.i.d.
//! on `[0, m]`. Hence
//! `MSE(G) = (G-1)/G · ∫ G f(m) F(m)^(G-2) ∫₀^m f(t) (t - m·Q(t/m))² dt dm`
//! with `f`, `F` the density and CDF of `|X|`.

use super::model::ModelGrid;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Density {
    Laplace,
    Normal,
}

impl Density {
    fn pdf(self, t: f64) -> f64 {
        match self {
            Self::Laplace => std::f64::consts::SQRT_2 * (-std::f64::consts::SQRT_2 * t).exp(),
            Self::Normal => 2.0 * (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt(),
        }
    }

    fn cdf(self, t: f64) -> f64 {
        match self {
            Self::Laplace => -(-std::f64::consts::SQRT_2 * t).exp_m1(),
            Self::Normal => statrs::function::erf::erf(t / std::f64::consts::SQRT_2),
        }
    }

    fn upper(self) -> f64 {
        match self {
            Self::Laplace => 32.0,
            Self::Normal => 10.0,
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (1..=n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

fn integrate(rule: &[(f64, f64)], a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    rule.iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

pub(crate) fn model_mse(density: Density, g: usize, grid: &ModelGrid) -> f64 {
    let rule = gauss_legendre(32);
    let levels = grid.levels();
    let mut edges = vec![0.0];
    edges.extend(levels.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    edges.push(1.0);
    let inner = |m: f64| -> f64 {
        levels
            .iter()
            .enumerate()
            .map(|(k, &q)| {
                integrate(&rule, m * edges[k], m * edges[k + 1], |t| density.pdf(t) * (t - m * q).powi(2))
            })
            .sum()
    };
    let panels = 400;
    let h = density.upper() / panels as f64;
    let gf = g as f64;
    let total: f64 = (0..panels)
        .map(|p| {
            integrate(&rule, p as f64 * h, (p + 1) as f64 * h, |m| {
                gf * density.pdf(m) * density.cdf(m).powi(g as i32 - 2) * inner(m)
            })
        })
        .sum();
    (gf - 1.0) / gf * total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials() {
        let rule = gauss_legendre(32);
        assert!((integrate(&rule, 0.0, 2.0, |x| x.powi(7)) - 32.0).abs() < 1e-12);
        let sum_w: f64 = rule.iter().map(|p| p.1).sum();
        assert!((sum_w - 2.0).abs() < 1e-13);
    }

    #[test]
    fn densities_normalize() {
        let rule = gauss_legendre(32);
        for d in [Density::Laplace, Density::Normal] {
            let total: f64 = (0..200).map(|p| integrate(&rule, p as f64 * 0.05 * d.upper() / 10.0, (p + 1) as f64 * 0.05 * d.upper() / 10.0, |t| d.pdf(t))).sum();
            assert!((total - 1.0).abs() < 1e-10, "{d:?} {total}");
            assert!((d.cdf(d.upper()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_element_zero_one_grid_normal() {
        // With G = 2 on {0, ±1}: the smaller element x₂ is dead-zoned when
        // |x₂| < |x₁|/2 and otherwise snapped to ±|x₁|. Independent 2D check by
        // direct integration over the ordered region of the joint density.
        let grid = ModelGrid::dead_zone(0.5).unwrap();
        let rule = gauss_legendre(32);
        let d = Density::Normal;
        let direct: f64 = (0..200)
            .map(|p| {
                let h = d.upper() / 200.0;
                integrate(&rule, p as f64 * h, (p + 1) as f64 * h, |a| {
                    let lo = integrate(&rule, 0.0, a / 2.0, |b| d.pdf(b) * b * b);
                    let hi = integrate(&rule, a / 2.0, a, |b| d.pdf(b) * (a - b).powi(2));
                    d.pdf(a) * (lo + hi)
                })
            })
            .sum();
        // Ordered pairs carry half the mass and both orderings contribute the
        // same error for a two-element block, so the factors cancel.
        let want = direct;
        assert!((model_mse(d, 2, &grid) - want).abs() < 1e-10);
    }
}
