//! Block-diagonal orthogonal transforms applied along matrix rows.
//!
//! A spec with block `k` multiplies each contiguous `k`-wide slice of a row by
//! the `k × k` matrix `U` (forward) or `Uᵀ` (inverse). All arithmetic is f64.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Identity,
    /// Sylvester Hadamard scaled by `1/√k`.
    Hadamard,
    /// Orthonormal DCT-II.
    DctII,
    /// Orthonormal DST-II.
    DstII,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub block: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, block: usize) -> Result<Self> {
        let spec = Self { kind, block };
        spec.validate()?;
        Ok(spec)
    }

    pub fn hadamard(block: usize) -> Result<Self> {
        Self::new(TransformKind::Hadamard, block)
    }

    pub fn validate(&self) -> Result<()> {
        if self.block == 0 {
            return Err(Error::InvalidTransform("block size must be positive".into()));
        }
        if self.kind == TransformKind::Hadamard && !self.block.is_power_of_two() {
            return Err(Error::InvalidTransform(format!(
                "hadamard block must be a power of two, got {}",
                self.block
            )));
        }
        Ok(())
    }

    pub fn check_cols(&self, cols: usize) -> Result<()> {
        self.validate()?;
        if cols % self.block != 0 {
            return Err(Error::Divisibility {
                what: "transform block",
                dim: cols,
                divisor: self.block,
            });
        }
        Ok(())
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            TransformKind::Identity => "identity",
            TransformKind::Hadamard => "hadamard",
            TransformKind::DctII => "dct",
            TransformKind::DstII => "dst",
        };
        write!(f, "{name}:{}", self.block)
    }
}

impl FromStr for TransformSpec {
    type Err = Error;

    /// Parses `hadamard:K`, `dct:K`, `dst:K` or `identity:K`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidTransform(format!("cannot parse transform `{s}`"));
        let (name, k) = s.split_once(':').ok_or_else(bad)?;
        let kind = match name.to_ascii_lowercase().as_str() {
            "identity" => TransformKind::Identity,
            "hadamard" | "had" => TransformKind::Hadamard,
            "dct" | "dct2" => TransformKind::DctII,
            "dst" | "dst2" => TransformKind::DstII,
            _ => return Err(bad()),
        };
        Self::new(kind, k.parse().map_err(|_| bad())?)
    }
}

/// The normalized `k × k` block `U`, with `U Uᵀ = I`.
pub fn transform_matrix(spec: TransformSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let k = spec.block;
    let n = k as f64;
    Ok(match spec.kind {
        TransformKind::Identity => Array2::eye(k),
        TransformKind::Hadamard => {
            let norm = n.sqrt().recip();
            Array2::from_shape_fn((k, k), |(i, j)| {
                if (i & j).count_ones() % 2 == 0 {
                    norm
                } else {
                    -norm
                }
            })
        }
        // Forward is y = x U, so column `j` of U is the j-th basis function.
        TransformKind::DctII => Array2::from_shape_fn((k, k), |(t, j)| {
            let c = if j == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            c * (PI * (2 * t + 1) as f64 * j as f64 / (2.0 * n)).cos()
        }),
        TransformKind::DstII => Array2::from_shape_fn((k, k), |(t, j)| {
            let c = if j + 1 == k { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            c * (PI * (2 * t + 1) as f64 * (j + 1) as f64 / (2.0 * n)).sin()
        }),
    })
}

/// A prepared transform that can be applied to row slices.
#[derive(Debug, Clone)]
pub(crate) struct BlockTransform {
    spec: TransformSpec,
    matrix: Array2<f64>,
}

impl BlockTransform {
    pub(crate) fn new(spec: TransformSpec) -> Result<Self> {
        Ok(Self {
            spec,
            matrix: transform_matrix(spec)?,
        })
    }

    /// Transforms every `k`-block of `row` in place.
    pub(crate) fn apply_row(&self, row: &mut [f64], dir: Direction, scratch: &mut Vec<f64>) {
        let k = self.spec.block;
        debug_assert_eq!(row.len() % k, 0);
        match self.spec.kind {
            TransformKind::Identity => {}
            TransformKind::Hadamard => {
                let norm = (k as f64).sqrt().recip();
                for block in row.chunks_exact_mut(k) {
                    fwht(block);
                    block.iter_mut().for_each(|v| *v *= norm);
                }
            }
            TransformKind::DctII | TransformKind::DstII => {
                scratch.resize(k, 0.0);
                let u = &self.matrix;
                for block in row.chunks_exact_mut(k) {
                    scratch.copy_from_slice(block);
                    for (j, out) in block.iter_mut().enumerate() {
                        *out = match dir {
                            Direction::Forward => (0..k).map(|i| scratch[i] * u[[i, j]]).sum(),
                            Direction::Inverse => (0..k).map(|i| scratch[i] * u[[j, i]]).sum(),
                        };
                    }
                }
            }
        }
    }

    /// Transforms every row of a standard-layout matrix in place, in parallel.
    pub(crate) fn apply_rows(&self, x: &mut Array2<f64>, dir: Direction) -> Result<()> {
        self.spec.check_cols(x.ncols())?;
        let cols = x.ncols();
        if cols == 0 || self.spec.kind == TransformKind::Identity {
            return Ok(());
        }
        let data = x
            .as_slice_mut()
            .expect("matrices are kept in standard layout");
        data.par_chunks_mut(cols)
            .for_each_init(Vec::new, |scratch, row| self.apply_row(row, dir, scratch));
        Ok(())
    }
}

/// Unnormalized in-place Walsh–Hadamard transform in Sylvester order.
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

/// f64 variant of [`apply_blockwise`].
pub fn apply_blockwise_f64(x: &Array2<f64>, spec: TransformSpec, dir: Direction) -> Result<Array2<f64>> {
    let t = BlockTransform::new(spec)?;
    let mut out = x.as_standard_layout().into_owned();
    t.apply_rows(&mut out, dir)?;
    Ok(out)
}

/// Multiplies each `k`-wide column slice of every row by `U` or `Uᵀ`.
pub fn apply_blockwise(x: &Array2<f32>, spec: TransformSpec, dir: Direction) -> Result<Array2<f32>> {
    let wide = x.mapv(f64::from);
    Ok(apply_blockwise_f64(&wide, spec, dir)?.mapv(|v| v as f32))
}

/// `W ↦ W U` blockwise; the activations owe the matching `X U`.
pub fn fuse_into_weights(w: &Array2<f32>, spec: TransformSpec) -> Result<Array2<f32>> {
    apply_blockwise(w, spec, Direction::Forward)
}

/// `H ↦ Uᵀ H U` for block-diagonal `U`, symmetrized.
pub fn conjugate_hessian(h: &Array2<f64>, spec: TransformSpec) -> Result<Array2<f64>> {
    if h.nrows() != h.ncols() {
        return Err(Error::Shape(format!(
            "hessian must be square, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    let t = BlockTransform::new(spec)?;
    let mut hu = h.as_standard_layout().into_owned();
    t.apply_rows(&mut hu, Direction::Forward)?;
    let mut out = hu.t().as_standard_layout().into_owned();
    t.apply_rows(&mut out, Direction::Forward)?;
    let out = out.t().to_owned();
    Ok(Array2::from_shape_fn(out.dim(), |(i, j)| 0.5 * (out[[i, j]] + out[[j, i]])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const KINDS: [TransformKind; 4] = [
        TransformKind::Identity,
        TransformKind::Hadamard,
        TransformKind::DctII,
        TransformKind::DstII,
    ];

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn hadamard_base_block() {
        let u = transform_matrix(TransformSpec::hadamard(2).unwrap()).unwrap();
        let r = 0.5f64.sqrt();
        let want = array![[r, r], [r, -r]];
        assert!((u - want).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn hadamard_four_row_sums() {
        let u = transform_matrix(TransformSpec::hadamard(4).unwrap()).unwrap();
        let raw = u.mapv(|v| v * 2.0);
        assert_eq!(raw.sum_axis(ndarray::Axis(1)).to_vec(), vec![4.0, 0.0, 0.0, 0.0]);
        assert_eq!(u.sum_axis(ndarray::Axis(1)).to_vec(), vec![2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_is_eye() {
        let u = transform_matrix(TransformSpec::new(TransformKind::Identity, 16).unwrap()).unwrap();
        assert_eq!(u, Array2::<f64>::eye(16));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(TransformSpec::hadamard(12).is_err());
        assert!(TransformSpec::new(TransformKind::DctII, 0).is_err());
        assert!(TransformSpec::new(TransformKind::DctII, 12).is_ok());
        let x = Array2::<f32>::zeros((2, 24));
        let err = apply_blockwise(&x, TransformSpec::hadamard(16).unwrap(), Direction::Forward).unwrap_err();
        assert!(matches!(err, Error::Divisibility { dim: 24, divisor: 16, .. }));
    }

    #[test]
    fn orthogonality_all_kinds() {
        for kind in KINDS {
            for p in 1..=8 {
                let u = transform_matrix(TransformSpec::new(kind, 1 << p).unwrap()).unwrap();
                let e = u.dot(&u.t()) - Array2::<f64>::eye(1 << p);
                let worst = e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(worst <= 1e-6, "{kind:?} k={} err {worst}", 1 << p);
            }
        }
    }

    #[test]
    fn small_examples() {
        let h = TransformSpec::hadamard(2).unwrap();
        let y = apply_blockwise_f64(&array![[1.0, 1.0], [3.0, 1.0]], h, Direction::Forward).unwrap();
        let r2 = 2f64.sqrt();
        assert!((y[[0, 0]] - r2).abs() < 1e-15 && y[[0, 1]].abs() < 1e-15);
        assert!((y[[1, 0]] - 2.0 * r2).abs() < 1e-15 && (y[[1, 1]] - r2).abs() < 1e-15);
    }

    #[test]
    fn fast_path_matches_dense_product() {
        for kind in KINDS {
            let spec = TransformSpec::new(kind, 16).unwrap();
            let u = transform_matrix(spec).unwrap();
            let x = random(3, 48, 11);
            let fwd = apply_blockwise_f64(&x, spec, Direction::Forward).unwrap();
            let inv = apply_blockwise_f64(&x, spec, Direction::Inverse).unwrap();
            for b in 0..3 {
                let xs = x.slice(ndarray::s![.., b * 16..(b + 1) * 16]);
                let want_f = xs.dot(&u);
                let want_i = xs.dot(&u.t());
                for ((r, c), v) in want_f.indexed_iter() {
                    assert!((fwd[[r, b * 16 + c]] - v).abs() < 1e-12);
                    assert!((inv[[r, b * 16 + c]] - want_i[[r, c]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn round_trip_and_norm() {
        for kind in KINDS {
            let spec = TransformSpec::new(kind, 16).unwrap();
            let x = random(8, 32, 3).mapv(|v| v as f32);
            let y = apply_blockwise(&x, spec, Direction::Forward).unwrap();
            let back = apply_blockwise(&y, spec, Direction::Inverse).unwrap();
            let worst = (&back - &x).iter().fold(0.0f32, |m, v| m.max(v.abs()));
            assert!(worst <= 1e-6, "{kind:?} {worst}");
            let nx: f64 = x.iter().map(|&v| (v as f64).powi(2)).sum();
            let ny: f64 = y.iter().map(|&v| (v as f64).powi(2)).sum();
            assert!(((nx - ny) / nx).abs() < 1e-5);
        }
    }

    #[test]
    fn fusing_basis_rows_gives_unit_rows() {
        let spec = TransformSpec::hadamard(8).unwrap();
        let u = transform_matrix(spec).unwrap();
        let fused = apply_blockwise_f64(&u.t().to_owned(), spec, Direction::Forward).unwrap();
        let e = fused - Array2::<f64>::eye(8);
        assert!(e.iter().all(|v| v.abs() < 1e-12));
        let w = random(3, 16, 5).mapv(|v| v as f32);
        let id = TransformSpec::new(TransformKind::Identity, 4).unwrap();
        assert_eq!(fuse_into_weights(&w, id).unwrap(), w);
    }

    #[test]
    fn hessian_conjugation_matches_dense() {
        let spec = TransformSpec::new(TransformKind::DctII, 4).unwrap();
        let a = random(8, 8, 9);
        let h = a.t().dot(&a);
        let u = transform_matrix(spec).unwrap();
        let mut big = Array2::<f64>::zeros((8, 8));
        big.slice_mut(ndarray::s![0..4, 0..4]).assign(&u);
        big.slice_mut(ndarray::s![4..8, 4..8]).assign(&u);
        let want = big.t().dot(&h).dot(&big);
        let got = conjugate_hessian(&h, spec).unwrap();
        assert!((got - want).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn parse_display() {
        for s in ["hadamard:32", "dct:16", "dst:8", "identity:4"] {
            assert_eq!(s.parse::<TransformSpec>().unwrap().to_string(), s);
        }
        assert!("hadamard:3".parse::<TransformSpec>().is_err());
        assert!("fft:4".parse::<TransformSpec>().is_err());
    }
}
