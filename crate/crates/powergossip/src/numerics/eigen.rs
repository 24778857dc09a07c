//! Symmetric eigensolver and singular spectra.
//!
//! The eigensolver is a cyclic Jacobi iteration: simple, fully deterministic,
//! and accurate to near machine precision at the sizes this simulator uses.
//! Singular values are recovered from the eigendecomposition of the smaller
//! Gram matrix, which is adequate for spectra that are not vanishingly small
//! relative to the largest singular value.

use crate::error::{Error, Result};
use crate::numerics::matrix::{vec_norm, Matrix};
use crate::numerics::rng::{sample_unit_sphere, RngStream};

/// Eigenvalues in descending order with matching orthonormal eigenvectors in
/// the columns of `vectors`.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_OFF_TOL: f64 = 1e-14;
const SYMMETRY_REL_TOL: f64 = 1e-12;

/// Full eigendecomposition of a symmetric matrix.
///
/// The input must be square and symmetric to within `1e-12` relative to its
/// Frobenius norm. The result satisfies `M v_k = values[k] v_k` with residual
/// below `1e-9 * ||M||_F` per column.
pub fn sym_eigen(m: &Matrix) -> Result<SymEigen> {
    let n = m.rows();
    if n != m.cols() {
        return Err(Error::ShapeMismatch {
            context: "sym_eigen".to_string(),
            expected: (n, n),
            got: m.shape(),
        });
    }
    let frob = m.frob_norm();
    let mut max_dev = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_dev = max_dev.max((m.get(i, j) - m.get(j, i)).abs());
        }
    }
    if max_dev > SYMMETRY_REL_TOL * frob.max(f64::MIN_POSITIVE) {
        return Err(Error::Asymmetric { max_dev });
    }

    // Work on the symmetrized copy so the iteration sees an exactly
    // symmetric operand.
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (m.get(i, j) + m.get(j, i));
        }
    }
    let mut v = Matrix::identity(n);
    let off_target = JACOBI_OFF_TOL * frob;

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off_sq = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off_sq += 2.0 * a[i * n + j] * a[i * n + j];
            }
        }
        if off_sq.sqrt() <= off_target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Rotate rows p and q.
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                // Rotate columns p and q.
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                // Accumulate the eigenvector rotation.
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    order.sort_by(|&x, &y| diag[y].partial_cmp(&diag[x]).unwrap().then(x.cmp(&y)));
    let values: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    Ok(SymEigen { values, vectors })
}

/// Singular values of `x` in descending order, `min(rows, cols)` of them,
/// computed from the eigenvalues of the smaller Gram matrix. Squaring puts a
/// noise floor of about `sigma_1 * sqrt(eps)` under the small values, so
/// eigenvalues within solver roundoff of zero (including tiny negatives) are
/// reported as exact zeros rather than as square-rooted noise.
pub fn singular_spectrum(x: &Matrix) -> Result<Vec<f64>> {
    let gram = if x.cols() <= x.rows() {
        x.t_mul(x)?
    } else {
        x.mul_t(x)?
    };
    let eig = sym_eigen(&gram)?;
    let dim = x.rows().max(x.cols()) as f64;
    let floor = eig.values.first().copied().unwrap_or(0.0).max(0.0) * f64::EPSILON * 4.0 * dim;
    Ok(eig
        .values
        .iter()
        .map(|&l| if l <= floor { 0.0 } else { l.sqrt() })
        .collect())
}

/// Top right singular vector of `x` (unit norm). For a zero matrix the
/// direction is immaterial and the first basis vector is returned.
pub fn top_right_singular_vector(x: &Matrix) -> Result<Vec<f64>> {
    let (p, q) = x.shape();
    if q <= p {
        let eig = sym_eigen(&x.t_mul(x)?)?;
        Ok(eig.vectors.column(0))
    } else {
        let eig = sym_eigen(&x.mul_t(x)?)?;
        let u = eig.vectors.column(0);
        let w = x.t_mat_vec(&u)?;
        let n = vec_norm(&w);
        if n <= 1e-150 {
            let mut e = vec![0.0; q];
            e[0] = 1.0;
            return Ok(e);
        }
        Ok(w.into_iter().map(|a| a / n).collect())
    }
}

const DEGENERATE_COLUMN_TOL: f64 = 1e-12;

/// Orthonormalizes the columns of a `d x k` matrix (`d >= k`) by modified
/// Gram-Schmidt with a second orthogonalization pass. A column whose residual
/// norm falls below `1e-12` is replaced by a fresh unit-sphere sample and
/// re-orthogonalized, so the result always has full column rank.
pub fn orthonormalize(v: &Matrix, rng: &mut RngStream) -> Result<Matrix> {
    let (d, k) = v.shape();
    if k > d {
        return Err(Error::invalid(format!(
            "cannot orthonormalize {k} columns in dimension {d}"
        )));
    }
    let mut out = Matrix::zeros(d, k);
    for c in 0..k {
        let mut col = v.column(c);
        let mut attempts = 0;
        loop {
            // Two passes of projection against the finished columns keep the
            // Gram matrix within ~1e-15 of the identity.
            for _ in 0..2 {
                for j in 0..c {
                    let q = out.column(j);
                    let coeff: f64 = col.iter().zip(&q).map(|(a, b)| a * b).sum();
                    for (x, qj) in col.iter_mut().zip(&q) {
                        *x -= coeff * qj;
                    }
                }
            }
            let n = vec_norm(&col);
            if n >= DEGENERATE_COLUMN_TOL {
                for x in col.iter_mut() {
                    *x /= n;
                }
                out.set_column(c, &col);
                break;
            }
            attempts += 1;
            if attempts > 64 {
                return Err(Error::NonFinite {
                    context: "orthonormalize failed to replace a degenerate column".to_string(),
                });
            }
            col = sample_unit_sphere(d, rng)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_symmetric(n: usize, rng: &mut RngStream) -> Matrix {
        let g = rng.standard_normal_matrix(n, n);
        g.add(&g.transpose()).unwrap().scaled(0.5)
    }

    #[test]
    fn identity_eigen() {
        let eig = sym_eigen(&Matrix::identity(4)).unwrap();
        for v in &eig.values {
            assert!((v - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn diagonal_is_sorted_descending() {
        let m = Matrix::new(3, 3, vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        let eig = sym_eigen(&m).unwrap();
        assert_eq!(eig.values, vec![3.0, 2.0, 1.0]);
        // Eigenvector of the top value is +-e0.
        assert!((eig.vectors.get(0, 0).abs() - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn one_by_one() {
        let m = Matrix::new(1, 1, vec![-2.5]).unwrap();
        let eig = sym_eigen(&m).unwrap();
        assert_eq!(eig.values, vec![-2.5]);
        assert_eq!(eig.vectors.get(0, 0), 1.0);
    }

    #[test]
    fn rejects_asymmetric_and_non_square() {
        let m = Matrix::new(2, 2, vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(matches!(sym_eigen(&m), Err(Error::Asymmetric { .. })));
        let r = Matrix::zeros(2, 3);
        assert!(sym_eigen(&r).is_err());
    }

    #[test]
    fn reconstruction_residual_is_tiny() {
        let mut rng = RngStream::new(42);
        for &n in &[2usize, 5, 16, 64] {
            let m = random_symmetric(n, &mut rng);
            let eig = sym_eigen(&m).unwrap();
            let mv = m.mul(&eig.vectors).unwrap();
            let vd = eig.vectors.scale_columns(&eig.values).unwrap();
            let resid = mv.max_abs_diff(&vd).unwrap();
            assert!(
                resid <= 1e-9 * m.frob_norm(),
                "residual {resid:e} too large for n={n}"
            );
            // Eigenvectors orthonormal.
            let gram = eig.vectors.t_mul(&eig.vectors).unwrap();
            let dev = gram.max_abs_diff(&Matrix::identity(n)).unwrap();
            assert!(dev <= 1e-10);
        }
    }

    #[test]
    fn eigenvalue_sum_matches_trace() {
        let mut rng = RngStream::new(2);
        let m = random_symmetric(12, &mut rng);
        let eig = sym_eigen(&m).unwrap();
        let trace: f64 = (0..12).map(|i| m.get(i, i)).sum();
        assert!((eig.values.iter().sum::<f64>() - trace).abs() <= 1e-10 * m.frob_norm());
    }

    #[test]
    fn rank_one_spectrum() {
        let u = [1.0, 2.0, 2.0];
        let v = [0.0, 3.0, 0.0, 4.0];
        // ||u|| = 3, ||v|| = 5: single singular value 15.
        let x = Matrix::outer(&u, &v).scaled(1.0);
        let s = singular_spectrum(&x).unwrap();
        assert_eq!(s.len(), 3);
        assert!((s[0] - 15.0).abs() <= 1e-10);
        assert!(s[1].abs() <= 1e-10 && s[2].abs() <= 1e-10);
    }

    #[test]
    fn spectrum_energy_and_transpose_agreement() {
        let mut rng = RngStream::new(8);
        let x = rng.standard_normal_matrix(9, 5);
        let s = singular_spectrum(&x).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        let energy: f64 = s.iter().map(|a| a * a).sum();
        assert!((energy - x.frob_norm_sq()).abs() <= 1e-9 * x.frob_norm_sq());
        let st = singular_spectrum(&x.transpose()).unwrap();
        for (a, b) in s.iter().zip(&st) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn zero_matrix_spectrum() {
        let s = singular_spectrum(&Matrix::zeros(4, 6)).unwrap();
        assert_eq!(s, vec![0.0; 4]);
    }

    #[test]
    fn top_right_vector_matches_construction() {
        let mut rng = RngStream::new(17);
        // Build a matrix with a known dominant right singular direction.
        let u = sample_unit_sphere(8, &mut rng).unwrap();
        let v1 = sample_unit_sphere(5, &mut rng).unwrap();
        let x = Matrix::outer(&u, &v1).scaled(4.0);
        let got = top_right_singular_vector(&x).unwrap();
        let cos: f64 = got.iter().zip(&v1).map(|(a, b)| a * b).sum();
        assert!(cos.abs() >= 1.0 - 1e-10);
        // Wide case exercises the transposed route.
        let wide = x.transpose();
        let got_u = top_right_singular_vector(&wide).unwrap();
        let cos_u: f64 = got_u.iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!(cos_u.abs() >= 1.0 - 1e-10);
    }

    #[test]
    fn orthonormalize_produces_orthonormal_columns() {
        let mut rng = RngStream::new(23);
        let v = rng.standard_normal_matrix(10, 4);
        let q = orthonormalize(&v, &mut rng).unwrap();
        let gram = q.t_mul(&q).unwrap();
        assert!(gram.max_abs_diff(&Matrix::identity(4)).unwrap() <= 1e-10);
    }

    #[test]
    fn orthonormalize_keeps_orthonormal_input() {
        let mut rng = RngStream::new(29);
        let v = rng.standard_normal_matrix(7, 3);
        let q = orthonormalize(&v, &mut rng).unwrap();
        let q2 = orthonormalize(&q, &mut rng).unwrap();
        assert!(q.max_abs_diff(&q2).unwrap() <= 1e-12);
    }

    #[test]
    fn orthonormalize_replaces_degenerate_columns() {
        let mut rng = RngStream::new(31);
        // Second column is a copy of the first: its residual vanishes.
        let mut v = Matrix::zeros(6, 2);
        let col = rng.normal_vec(6);
        v.set_column(0, &col);
        v.set_column(1, &col);
        let q = orthonormalize(&v, &mut rng).unwrap();
        let gram = q.t_mul(&q).unwrap();
        assert!(gram.max_abs_diff(&Matrix::identity(2)).unwrap() <= 1e-10);
    }

    #[test]
    fn orthonormalize_rejects_wide_input() {
        let mut rng = RngStream::new(3);
        let v = Matrix::zeros(2, 3);
        assert!(orthonormalize(&v, &mut rng).is_err());
    }
}
