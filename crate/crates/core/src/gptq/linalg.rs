//! Small dense f64 kernels for the Hessian factorizations.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Lower factor `L` with `A = L Lᵀ`.
pub(crate) fn cholesky_lower(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Cholesky { column: j });
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix.
fn invert_lower(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        inv[[j, j]] = 1.0 / l[[j, j]];
        for i in j + 1..n {
            let mut s = 0.0;
            for k in j..i {
                s += l[[i, k]] * inv[[k, j]];
            }
            inv[[i, j]] = -s / l[[i, i]];
        }
    }
    inv
}

/// Upper-triangular `U` with `H⁻¹ = Uᵀ U`, via Cholesky of `H`, triangular
/// inversion and Cholesky of the inverse.
pub(crate) fn upper_inverse_factor(h: &Array2<f64>) -> Result<Array2<f64>> {
    let l = cholesky_lower(h)?;
    let li = invert_lower(&l);
    // H⁻¹ = L⁻ᵀ L⁻¹
    let hinv = li.t().dot(&li);
    let hinv = Array2::from_shape_fn(hinv.dim(), |(i, j)| 0.5 * (hinv[[i, j]] + hinv[[j, i]]));
    Ok(cholesky_lower(&hinv)?.reversed_axes())
}

/// Gauss–Jordan inverse with partial pivoting.
pub(crate) fn gauss_jordan_inverse(a: &Array2<f64>, step: usize) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[[i, c]].abs().total_cmp(&m[[j, c]].abs()))
            .expect("non-empty");
        if !(m[[p, c]].abs() > 1e-14 * scale) {
            return Err(Error::Singular { step });
        }
        if p != c {
            for k in 0..n {
                m.swap([p, k], [c, k]);
                inv.swap([p, k], [c, k]);
            }
        }
        let piv = m[[c, c]];
        for k in 0..n {
            m[[c, k]] /= piv;
            inv[[c, k]] /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = m[[r, c]];
                if f != 0.0 {
                    for k in 0..n {
                        m[[r, k]] -= f * m[[c, k]];
                        inv[[r, k]] -= f * inv[[c, k]];
                    }
                }
            }
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
        a.t().dot(&a) + Array2::<f64>::eye(n) * 0.1
    }

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn cholesky_reconstructs() {
        let h = spd(12, 1);
        let l = cholesky_lower(&h).unwrap();
        assert!(max_abs(&(l.dot(&l.t()) - &h)) < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let h = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(cholesky_lower(&h), Err(Error::Cholesky { column: 1 })));
    }

    #[test]
    fn upper_factor_of_inverse() {
        let h = spd(10, 2);
        let u = upper_inverse_factor(&h).unwrap();
        for i in 0..10 {
            for j in 0..i {
                assert_eq!(u[[i, j]], 0.0);
            }
        }
        let prod = u.t().dot(&u).dot(&h);
        assert!(max_abs(&(prod - Array2::<f64>::eye(10))) < 1e-9);
    }

    #[test]
    fn gauss_jordan_matches_identity() {
        let h = spd(9, 3);
        let inv = gauss_jordan_inverse(&h, 0).unwrap();
        assert!(max_abs(&(inv.dot(&h) - Array2::<f64>::eye(9))) < 1e-9);
        let sing = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(matches!(gauss_jordan_inverse(&sing, 5), Err(Error::Singular { step: 5 })));
    }
}
