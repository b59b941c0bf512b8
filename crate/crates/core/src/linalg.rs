//! Dense kernels shared by the numerical modules.
//!
//! Matrices are `nalgebra::DMatrix<f64>` throughout. The symmetric
//! eigensolver and large Gram products go through `faer`, which is several
//! times faster than the nalgebra equivalents at the sizes used here
//! (N in the hundreds). faer runs sequentially so results do not depend on
//! the thread pool.

use std::sync::Once;

use faer::{Mat, MatRef, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

static SEQUENTIAL: Once = Once::new();

fn init() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

fn view(m: &DMatrix<f64>) -> MatRef<'_, f64> {
    MatRef::from_column_major_slice(m.as_slice(), m.nrows(), m.ncols())
}

fn to_nalgebra(m: MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Symmetric eigendecomposition. Eigenvalues ascending, eigenvectors in the
/// matching columns. Only the lower triangle of `m` is read.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(format!("eigen of {}x{} matrix", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in symmetric eigenproblem".into()));
    }
    init();
    let evd = view(m)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigensolver failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let values = DVector::from_fn(m.nrows(), |i, _| s[i]);
    Ok((values, to_nalgebra(evd.U())))
}

/// The `k` leading eigenpairs of a symmetric matrix, eigenvalues descending.
pub fn top_eigen(m: &DMatrix<f64>, k: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if k > n {
        return Err(Error::dim(format!("requested {k} eigenvectors of a {n}x{n} matrix")));
    }
    let (values, vectors) = sym_eigen(m)?;
    let vals = (0..k).map(|c| values[n - 1 - c]).collect();
    let vecs = DMatrix::from_fn(n, k, |i, c| vectors[(i, n - 1 - c)]);
    Ok((vals, vecs))
}

/// `aᵀ b`.
pub fn mul_tn(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows(), "mul_tn row mismatch");
    init();
    let p: Mat<f64> = view(a).transpose() * view(b);
    to_nalgebra(p.as_ref())
}

/// `a b`.
pub fn mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.nrows(), "mul shape mismatch");
    init();
    let p: Mat<f64> = view(a) * view(b);
    to_nalgebra(p.as_ref())
}

/// Subtract each column's mean.
pub fn center_columns(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    let rows = z.nrows().max(1) as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / rows;
        col.add_scalar_mut(-mean);
    }
    out
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Polar factor `U Vᵀ` of the thin SVD: the nearest matrix with orthonormal
/// columns in Frobenius norm.
pub fn polar_factor(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry before retraction".into()));
    }
    let svd = g.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD produced no U".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Numerical("SVD produced no Vᵀ".into()))?;
    Ok(u * vt)
}

/// Flip column signs so the largest-magnitude entry of each column is
/// non-negative. Ties go to the lowest row index.
pub fn normalize_signs(phi: &mut DMatrix<f64>) {
    for mut col in phi.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if col.nrows() > 0 && col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// `‖ΦᵀΦ − I‖_F`.
pub fn orthonormality_error(phi: &DMatrix<f64>) -> f64 {
    let g = phi.transpose() * phi;
    (g - DMatrix::<f64>::identity(phi.ncols(), phi.ncols())).norm()
}

/// Frobenius distance between the projectors onto the column spaces of two
/// orthonormal bases.
pub fn projector_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let aa = (a.transpose() * a).norm_squared();
    let bb = (b.transpose() * b).norm_squared();
    let ab = (a.transpose() * b).norm_squared();
    (aa + bb - 2.0 * ab).max(0.0).sqrt()
}

/// Largest absolute eigenvalue of a symmetric matrix by power iteration.
/// Deterministic start; slightly overestimates are harmless where it is used
/// as a step-size bound.
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    // Alternate start entries so the vector is not orthogonal to a
    // constant-like leading eigenvector.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i % 7) as f64) / 7.0);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..200 {
        // Iterate with m² so negative and positive extremes are treated alike.
        let w = m * &v;
        let w2 = m * &w;
        let norm = w2.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm.sqrt();
        v = w2 / norm;
        if (next - estimate).abs() <= 1e-10 * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        &a * a.transpose() + DMatrix::identity(n, n)
    }

    #[test]
    fn eigen_reconstructs() {
        let m = spd(9);
        let (vals, vecs) = sym_eigen(&m).unwrap();
        let rebuilt = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!((rebuilt - &m).norm() < 1e-9 * m.norm());
        assert!(vals.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn products_match_nalgebra() {
        let a = DMatrix::from_fn(6, 4, |i, j| (i as f64).sin() + j as f64);
        let b = DMatrix::from_fn(6, 3, |i, j| (i * j) as f64 * 0.1 - 1.0);
        assert!((mul_tn(&a, &b) - a.transpose() * &b).norm() < 1e-12);
        let c = DMatrix::from_fn(4, 5, |i, j| (i + 2 * j) as f64);
        assert!((mul(&a, &c) - &a * &c).norm() < 1e-10);
    }

    #[test]
    fn polar_is_orthonormal() {
        let g = DMatrix::from_fn(8, 3, |i, j| ((i + 1) * (j + 2)) as f64 % 5.0 + 0.1 * i as f64);
        let q = polar_factor(&g).unwrap();
        assert!(orthonormality_error(&q) < 1e-12);
    }

    #[test]
    fn power_iteration_matches_eigen() {
        let m = spd(12);
        let (vals, _) = sym_eigen(&m).unwrap();
        let top = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!((sym_spectral_norm(&m) - top).abs() < 1e-6 * top);
    }

    #[test]
    fn sign_rule() {
        let mut phi = DMatrix::from_column_slice(3, 2, &[0.1, -0.9, 0.3, 0.5, 0.2, -0.5]);
        normalize_signs(&mut phi);
        assert_eq!(phi[(1, 0)], 0.9);
        // tie between rows 0 and 2 resolves to row 0, already positive
        assert_eq!(phi[(0, 1)], 0.5);
    }
}
