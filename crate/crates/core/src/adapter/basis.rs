//! Regularised basis update on the Stiefel manifold.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

/// Settings of the reweighted-ℓ1 inner loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparsityLoop {
    /// Gradient step; `None` uses `1 / (‖C‖₂ + λ₁‖Ω‖₂)`.
    pub step: Option<f64>,
    /// Reweighting offset in `1 / (|Φ| + eps)`.
    pub eps: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SparsityLoop {
    fn default() -> Self {
        SparsityLoop { step: None, eps: 1e-4, tol: 1e-6, max_iter: 100 }
    }
}

/// Leading `k`-dimensional basis of `sym(C - λ₁Ω)`, refined by proximal
/// gradient steps with reweighted soft-thresholding when `λ₂ > 0`. The
/// result has orthonormal columns and canonical signs.
///
/// `omega_norm` is `‖Ω‖₂`, used only for the default step size.
#[allow(clippy::too_many_arguments)]
pub fn basis_step(
    c: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    omega_norm: f64,
    lambda1: f64,
    lambda2: f64,
    k: usize,
    warm_start: Option<&DMatrix<f64>>,
    sparsity: &SparsityLoop,
) -> Result<DMatrix<f64>> {
    let n = c.nrows();
    if c.shape() != (n, n) || omega.shape() != (n, n) {
        return Err(Error::dim(format!("target {:?} and penalty {:?} must be square and equal", c.shape(), omega.shape())));
    }
    if k == 0 || k > n {
        return Err(Error::dim(format!("rank {k} outside 1..={n}")));
    }
    if lambda1 < 0.0 || lambda2 < 0.0 {
        return Err(Error::Config("penalties must be non-negative".into()));
    }
    let m = linalg::symmetrize(&(c - omega * lambda1));
    let (_, leading) = linalg::top_eigen(&m, k)?;
    let mut phi = match warm_start {
        Some(w) if w.shape() == (n, k) => w.clone(),
        Some(w) => return Err(Error::dim(format!("warm start is {:?}, expected {n}x{k}", w.shape()))),
        None => leading,
    };
    if lambda2 > 0.0 {
        let step = match sparsity.step {
            Some(s) if s > 0.0 => s,
            Some(s) => return Err(Error::Config(format!("basis step size {s} must be positive"))),
            None => {
                let bound = linalg::sym_spectral_norm(c) + lambda1 * omega_norm;
                if bound > 0.0 { 1.0 / bound } else { 1.0 }
            }
        };
        for _ in 0..sparsity.max_iter {
            let ascent = &phi + (linalg::mul(&m, &phi) * step);
            let shrunk = DMatrix::from_fn(n, k, |i, j| {
                let g = ascent[(i, j)];
                let thr = step * lambda2 / (phi[(i, j)].abs() + sparsity.eps);
                g.signum() * (g.abs() - thr).max(0.0)
            });
            // A column thresholded to zero has no direction left to retract to.
            let sv = shrunk.singular_values();
            if sv.min() <= 1e-12 * sv.max().max(f64::MIN_POSITIVE) {
                break;
            }
            let next = linalg::polar_factor(&shrunk)?;
            let change = (&next - &phi).norm();
            phi = next;
            if change <= sparsity.tol {
                break;
            }
        }
    }
    linalg::normalize_signs(&mut phi);
    Ok(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_roughness, LocationSet};

    fn target(n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(3 * n, n, |i, j| ((i * 13 + j * 7) % 17) as f64 / 17.0 - 0.5);
        let ac = linalg::center_columns(&a);
        ac.transpose() * ac
    }

    #[test]
    fn unpenalised_is_eigenvectors() {
        let c = target(10);
        let omega = DMatrix::zeros(10, 10);
        let phi = basis_step(&c, &omega, 0.0, 0.0, 0.0, 2, None, &SparsityLoop::default()).unwrap();
        let (_, mut v) = linalg::top_eigen(&c, 2).unwrap();
        linalg::normalize_signs(&mut v);
        assert!((phi - v).norm() < 1e-10);
    }

    #[test]
    fn smoothing_lowers_roughness() {
        let locs = LocationSet::equispaced_1d(20, -2.0, 2.0).unwrap();
        let rm = build_roughness(&locs).unwrap();
        let c = target(20);
        let sp = SparsityLoop::default();
        let raw = basis_step(&c, &rm.omega, rm.spectral_norm, 0.0, 0.0, 1, None, &sp).unwrap();
        let smooth = basis_step(&c, &rm.omega, rm.spectral_norm, 1.0, 0.0, 1, None, &sp).unwrap();
        let rough = |p: &DMatrix<f64>| (p.transpose() * &rm.omega * p).trace();
        assert!(rough(&smooth) < rough(&raw));
    }

    #[test]
    fn sparsity_keeps_orthonormality() {
        let locs = LocationSet::equispaced_1d(30, -3.0, 3.0).unwrap();
        let rm = build_roughness(&locs).unwrap();
        let c = target(30);
        let phi = basis_step(&c, &rm.omega, rm.spectral_norm, 0.1, 5.0, 3, None, &SparsityLoop::default()).unwrap();
        assert!(linalg::orthonormality_error(&phi) < 1e-10);
    }

    #[test]
    fn rejects_bad_rank() {
        let c = target(5);
        let z = DMatrix::zeros(5, 5);
        assert!(basis_step(&c, &z, 0.0, 0.0, 0.0, 6, None, &SparsityLoop::default()).is_err());
        assert!(basis_step(&c, &z, 0.0, 0.0, 0.0, 0, None, &SparsityLoop::default()).is_err());
    }
}
