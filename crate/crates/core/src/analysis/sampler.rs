use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Distribution {
    /// Laplace with scale `b = 1/√2`, so unit variance.
    LaplaceUnitVar,
    StdNormal,
}

impl std::str::FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "laplace" => Ok(Self::LaplaceUnitVar),
            "normal" | "gaussian" => Ok(Self::StdNormal),
            _ => Err(Error::InvalidArgument(format!("unknown distribution `{s}`"))),
        }
    }
}

/// Seeded i.i.d. sampler. Block `i` always comes from stream `(seed, i)`,
/// so results do not depend on how blocks are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampler {
    pub kind: Distribution,
    pub seed: u64,
}

impl Sampler {
    pub fn new(kind: Distribution, seed: u64) -> Self {
        Self { kind, seed }
    }

    /// Same distribution, independent seed derived from `salt`.
    pub fn derive(&self, salt: u64) -> Self {
        Self {
            kind: self.kind,
            seed: crate::rng::splitmix64(self.seed ^ crate::rng::splitmix64(salt)),
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.kind {
            Distribution::LaplaceUnitVar => {
                // Magnitude is Exp(√2) by inverse CDF; 1 - u lies in (0, 1].
                let u: f64 = rng.gen();
                let mag = -(1.0 - u).ln() / std::f64::consts::SQRT_2;
                if rng.gen::<bool>() {
                    mag
                } else {
                    -mag
                }
            }
            Distribution::StdNormal => rng.sample(StandardNormal),
        }
    }

    pub fn fill_block(&self, index: u64, out: &mut [f64]) {
        let mut rng = stream(self.seed, index);
        for v in out {
            *v = self.draw(&mut rng);
        }
    }

    /// `n_blocks × g` matrix, one block per row.
    pub fn sample_blocks(&self, g: usize, n_blocks: usize) -> Result<Array2<f64>> {
        if g < 2 {
            return Err(Error::InvalidArgument(format!("blocks need at least 2 elements, got {g}")));
        }
        let mut out = Array2::<f64>::zeros((n_blocks, g));
        out.as_slice_mut()
            .expect("fresh array")
            .par_chunks_mut(g)
            .enumerate()
            .for_each(|(i, row)| self.fill_block(i as u64, row));
        Ok(out)
    }

    /// `rows × cols` f32 matrix with one stream per row.
    pub fn sample_matrix(&self, rows: usize, cols: usize) -> Array2<f32> {
        let mut out = Array2::<f32>::zeros((rows, cols));
        if cols > 0 {
            out.as_slice_mut()
                .expect("fresh array")
                .par_chunks_mut(cols)
                .enumerate()
                .for_each(|(i, row)| {
                    let mut rng = stream(self.seed, i as u64);
                    for v in row {
                        *v = self.draw(&mut rng) as f32;
                    }
                });
        }
        out
    }
}

/// Laplace matrix where each element is independently scaled by `factor`
/// with probability `p`.
pub fn outlier_mixture(rows: usize, cols: usize, p: f64, factor: f64, seed: u64) -> Array2<f32> {
    let base = Sampler::new(Distribution::LaplaceUnitVar, seed);
    let mask = base.derive(0x6f75_746c);
    let mut x = base.sample_matrix(rows, cols);
    for (r, mut row) in x.rows_mut().into_iter().enumerate() {
        let mut rng = stream(mask.seed, r as u64);
        for v in row.iter_mut() {
            if rng.gen::<f64>() < p {
                *v = (*v as f64 * factor) as f32;
            }
        }
    }
    x
}

/// Correlated Gaussian activations `n × d` with low-rank-plus-diagonal
/// covariance: `Z B + D E` for `Z: n × rank` and `E: n × d` standard normal,
/// `B` standard normal scaled by `1/√rank`, `D` diagonal in `[0.1, 1)`.
pub fn correlated_gaussian(n: usize, d: usize, rank: usize, seed: u64) -> Array2<f32> {
    let normal = Sampler::new(Distribution::StdNormal, seed);
    let b = normal.derive(1).sample_matrix(rank, d).mapv(|v| v as f64 / (rank.max(1) as f64).sqrt());
    let mut drng = stream(normal.derive(2).seed, 0);
    let diag: Vec<f64> = (0..d).map(|_| drng.gen_range(0.1..1.0)).collect();
    let z = normal.derive(3).sample_matrix(n, rank).mapv(f64::from);
    let e = normal.derive(4).sample_matrix(n, d).mapv(f64::from);
    let mut x = z.dot(&b);
    for (mut row, erow) in x.rows_mut().into_iter().zip(e.rows()) {
        for (j, v) in row.iter_mut().enumerate() {
            *v += diag[j] * erow[j];
        }
    }
    x.mapv(|v| v as f32)
}
