//! Dense complex linear algebra shared by the solvers.
//!
//! Matrices are `nalgebra` dynamic matrices over `Complex64`. All tolerances
//! here are relative to the dominant scale of the input, since channel
//! magnitudes span many orders of magnitude.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;
pub type RealMatrix = DMatrix<f64>;
pub type RealVector = DVector<f64>;

/// Relative tolerance used to accept an input as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;

const PERRON_MAX_ITERS: usize = 100;
const PERRON_RESIDUAL_TOL: f64 = 1e-9;

pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Unit-modulus complex number `e^{j·phase}`.
pub fn cis(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: RealVector,
    /// Column `i` is the unit-norm eigenvector paired with `eigenvalues[i]`.
    pub eigenvectors: ComplexMatrix,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.get(0).copied().unwrap_or(0.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().last().unwrap_or(0.0)
    }

    /// `U Λ U^H`.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= Complex64::from(self.eigenvalues[j]);
        }
        &scaled * u.adjoint()
    }

    /// Factor `U Λ₊^{1/2}` with negative eigenvalues clipped to zero, so that
    /// `factor · factor^H` is the PSD projection of the input.
    pub fn psd_factor(&self) -> ComplexMatrix {
        let mut f = self.eigenvectors.clone();
        for (j, mut col) in f.column_iter_mut().enumerate() {
            col *= Complex64::from(self.eigenvalues[j].max(0.0).sqrt());
        }
        f
    }
}

fn max_abs(a: &ComplexMatrix) -> f64 {
    a.iter().fold(0.0f64, |m, z| m.max(z.norm()))
}

pub fn is_finite(a: &ComplexMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &ComplexMatrix) -> ComplexMatrix {
    (a + a.adjoint()) * Complex64::from(0.5)
}

/// Real inner product `Re Tr(A^H B)`; equals `Tr(A B)` for Hermitian `A`, `B`.
pub fn inner(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// Rank-one outer product `x x^H`.
pub fn outer(x: &ComplexVector) -> ComplexMatrix {
    x * x.adjoint()
}

pub fn check_hermitian(a: &ComplexMatrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Contract(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if !is_finite(a) {
        return Err(Error::Contract("matrix has non-finite entries".into()));
    }
    let scale = max_abs(a);
    let asym = (a - a.adjoint()).iter().fold(0.0f64, |m, z| m.max(z.norm()));
    if asym > HERMITIAN_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Contract(format!(
            "matrix is not Hermitian (asymmetry {asym:e} vs scale {scale:e})"
        )));
    }
    Ok(())
}

/// Eigen-decomposition of a Hermitian matrix.
///
/// Eigenvalues are sorted descending; ties keep the solver's index order.
pub fn hermitian_eig(a: &ComplexMatrix) -> Result<EigenDecomposition> {
    check_hermitian(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(EigenDecomposition {
            eigenvalues: RealVector::zeros(0),
            eigenvectors: ComplexMatrix::zeros(0, 0),
        });
    }
    let eig = hermitian_part(a).symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let eigenvalues = RealVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = ComplexMatrix::zeros(n, n);
    for (dst, &src) in idx.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let norm = col.norm();
        eigenvectors.set_column(dst, &(col / Complex64::from(norm)));
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Perron root and nonnegative eigenvector of a nonnegative real matrix.
///
/// The eigenvector is scaled so its last component equals 1 when that
/// component is non-negligible, otherwise to unit max-norm.
pub fn dominant_eigpair(a: &RealMatrix) -> Result<(f64, RealVector)> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(Error::Contract(format!(
            "expected a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Contract("matrix must be finite and entrywise nonnegative".into()));
    }
    let n = a.nrows();
    let scale = a.iter().fold(0.0f64, |m, x| m.max(*x));
    if scale == 0.0 {
        let mut v = RealVector::zeros(n);
        v[n - 1] = 1.0;
        return Ok((0.0, v));
    }

    // Spectral radius estimate from the real Schur form; refined below by
    // shift-and-invert iteration, which converges in a handful of steps.
    let lambda0 = a
        .clone()
        .complex_eigenvalues()
        .iter()
        .fold(0.0f64, |m, z| m.max(z.norm()));

    let mut lambda = lambda0;
    let mut v = RealVector::from_element(n, 1.0 / (n as f64).sqrt());
    let residual = |lambda: f64, v: &RealVector| -> f64 {
        let r = a * v - v * lambda;
        r.amax() / (v.amax() * lambda.max(scale * f64::EPSILON))
    };

    // Iterate to machine precision; stop once the residual stagnates.
    let mut best = (residual(lambda, &v), lambda, v.clone());
    let mut stale = 0;
    for iter in 0..PERRON_MAX_ITERS {
        let shift = lambda + scale * 1e-10 * (1 + iter) as f64;
        let shifted = a - RealMatrix::identity(n, n) * shift;
        let Some(next) = shifted.lu().solve(&v) else {
            break;
        };
        let norm = next.norm();
        if !norm.is_finite() || norm == 0.0 {
            break;
        }
        v = next / norm;
        if v.sum() < 0.0 {
            v = -v;
        }
        lambda = v.dot(&(a * &v)) / v.dot(&v);
        let r = residual(lambda, &v);
        if r < best.0 {
            stale = if r > 0.5 * best.0 { stale + 1 } else { 0 };
            best = (r, lambda, v.clone());
        } else {
            stale += 1;
        }
        if best.0 <= 4.0 * f64::EPSILON || stale >= 3 {
            break;
        }
    }
    let (_, l_best, v_best) = best;
    lambda = l_best;
    v = v_best;
    let converged = residual(lambda, &v) <= PERRON_RESIDUAL_TOL;
    if !converged && residual(lambda, &v) > PERRON_RESIDUAL_TOL {
        // Plain power iteration on A + I as a fallback for defective cases.
        let shifted = a + RealMatrix::identity(n, n) * scale;
        for _ in 0..20_000 {
            let next = &shifted * &v;
            v = &next / next.norm();
            lambda = v.dot(&(a * &v)) / v.dot(&v);
            if residual(lambda, &v) <= PERRON_RESIDUAL_TOL * 0.1 {
                break;
            }
        }
        if residual(lambda, &v) > PERRON_RESIDUAL_TOL {
            return Err(Error::Numerical(format!(
                "Perron iteration did not converge (residual {:e})",
                residual(lambda, &v)
            )));
        }
    }

    let vmax = v.amax();
    for x in v.iter_mut() {
        if *x < 0.0 {
            if *x < -1e-10 * vmax {
                return Err(Error::Numerical(
                    "dominant eigenvector has significantly negative entries".into(),
                ));
            }
            *x = 0.0;
        }
    }
    let last = v[n - 1];
    if last > 1e-12 * vmax {
        v /= last;
    } else {
        v /= vmax;
    }
    Ok((lambda, v))
}

/// Number of eigenvalues above `tol · λ_max` of a Hermitian PSD matrix.
pub fn numerical_rank(a: &ComplexMatrix, tol: f64) -> Result<usize> {
    let eig = hermitian_eig(a)?;
    let lmax = eig.max_eigenvalue();
    if lmax <= 0.0 {
        if eig.min_eigenvalue() < 0.0 && eig.min_eigenvalue().abs() > f64::EPSILON * max_abs(a) {
            return Err(Error::NotPsd {
                min_eig: eig.min_eigenvalue(),
                scale: lmax,
            });
        }
        return Ok(0);
    }
    if eig.min_eigenvalue() < -tol * lmax {
        return Err(Error::NotPsd {
            min_eig: eig.min_eigenvalue(),
            scale: lmax,
        });
    }
    Ok(eig.eigenvalues.iter().filter(|&&l| l > tol * lmax).count())
}

/// Frobenius norm.
pub fn fro_norm(a: &ComplexMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    fn cm(rows: usize, data: &[(f64, f64)]) -> ComplexMatrix {
        ComplexMatrix::from_row_iterator(rows, data.len() / rows, data.iter().map(|&(r, i)| c64(r, i)))
    }

    #[test]
    fn eig_diagonal() {
        let a = cm(2, &[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (2.0, 0.0)]);
        let e = hermitian_eig(&a).unwrap();
        assert!(close(e.eigenvalues[0], 2.0, 1e-14));
        assert!(close(e.eigenvalues[1], 1.0, 1e-14));
    }

    #[test]
    fn eig_swap_and_complex() {
        let a = cm(2, &[(0.0, 0.0), (1.0, 0.0), (1.0, 0.0), (0.0, 0.0)]);
        let e = hermitian_eig(&a).unwrap();
        assert!(close(e.eigenvalues[0], 1.0, 1e-14));
        assert!(close(e.eigenvalues[1], -1.0, 1e-14));

        let b = cm(2, &[(1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 0.0)]);
        let e = hermitian_eig(&b).unwrap();
        assert!(close(e.eigenvalues[0], 2.0, 1e-14));
        assert!(e.eigenvalues[1].abs() < 1e-14);
        assert!(fro_norm(&(e.reconstruct() - &b)) <= 1e-12 * fro_norm(&b));
    }

    #[test]
    fn eig_rejects_bad_input() {
        let rect = ComplexMatrix::zeros(2, 3);
        assert!(matches!(hermitian_eig(&rect), Err(Error::Contract(_))));
        let nonherm = cm(2, &[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (0.0, 0.0)]);
        assert!(matches!(hermitian_eig(&nonherm), Err(Error::Contract(_))));
    }

    #[test]
    fn perron_small_cases() {
        let (l, _) = dominant_eigpair(&RealMatrix::identity(2, 2)).unwrap();
        assert!(close(l, 1.0, 1e-12));

        let d = RealMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let (l, v) = dominant_eigpair(&d).unwrap();
        assert!(close(l, 3.0, 1e-12));
        assert!(v[0].abs() < 1e-9 && close(v[1], 1.0, 1e-12));
    }

    #[test]
    fn perron_hand_solved_three_by_three() {
        // Trailing 2x2 block [[0,1],[1,2]] has characteristic polynomial
        // λ² - 2λ - 1, so λ = 1 + √2; the first row gives v1 = (v2 + v3)/λ.
        let pi = RealMatrix::from_row_slice(3, 3, &[0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 2.0]);
        let (l, v) = dominant_eigpair(&pi).unwrap();
        let s2 = 2f64.sqrt();
        assert!(close(l, 1.0 + s2, 1e-12));
        assert!(close(v[0], 2.0 - s2, 1e-10));
        assert!(close(v[1], s2 - 1.0, 1e-10));
        assert!(close(v[2], 1.0, 1e-14));
    }

    #[test]
    fn perron_rejects_negative_entries() {
        let a = RealMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 1.0]);
        assert!(matches!(dominant_eigpair(&a), Err(Error::Contract(_))));
    }

    #[test]
    fn rank_basic() {
        assert_eq!(numerical_rank(&ComplexMatrix::identity(4, 4), 1e-8).unwrap(), 4);
        assert_eq!(numerical_rank(&ComplexMatrix::zeros(3, 3), 1e-8).unwrap(), 0);
        let e = ComplexVector::from_vec(vec![c64(1.0, 2.0), c64(-0.5, 0.1), c64(0.0, 3.0)]);
        assert_eq!(numerical_rank(&outer(&e), 1e-8).unwrap(), 1);
        let neg = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![c64(1.0, 0.0), c64(-0.5, 0.0)]));
        assert!(matches!(numerical_rank(&neg, 1e-8), Err(Error::NotPsd { .. })));
    }
}
