//! Low-rank-plus-nugget covariance estimated from a fitted basis.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// `S = RᵀR / T` (not centered).
pub fn residual_gram(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if r.nrows() == 0 {
        return Err(Error::invalid("residual matrix has no rows"));
    }
    Ok(linalg::mul_tn(r, r) / r.nrows() as f64)
}

/// Smallest K whose leading eigenvalues of `S` explain at least `tau_var` of
/// the trace. Returns K with the cumulative-variance curve. A zero matrix
/// gives K = 0.
pub fn select_basis_rank(s: &DMatrix<f64>, tau_var: f64) -> Result<(usize, Vec<f64>)> {
    if !(tau_var > 0.0 && tau_var <= 1.0) {
        return Err(Error::Config(format!("variance fraction {tau_var} outside (0, 1]")));
    }
    let (vals, _) = linalg::sym_eigen(s)?;
    let desc: Vec<f64> = vals.iter().rev().map(|v| v.max(0.0)).collect();
    let total: f64 = desc.iter().sum();
    if total <= 0.0 {
        return Ok((0, vec![0.0; desc.len()]));
    }
    let mut acc = 0.0;
    let curve: Vec<f64> = desc.iter().map(|v| {
        acc += v;
        acc / total
    }).collect();
    // Guard the last step against rounding just below the threshold.
    let k = curve.iter().position(|&c| c >= tau_var - 1e-12).map_or(desc.len(), |p| p + 1);
    Ok((k, curve))
}

/// How the eigenvalue shrinkage `τ` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShrinkagePolicy {
    /// Reuse the smoothness penalty λ₁.
    Lambda1,
    Fixed(f64),
}

impl Default for ShrinkagePolicy {
    fn default() -> Self {
        ShrinkagePolicy::Fixed(0.0)
    }
}

impl ShrinkagePolicy {
    pub fn resolve(&self, lambda1: f64) -> f64 {
        match *self {
            ShrinkagePolicy::Lambda1 => lambda1,
            ShrinkagePolicy::Fixed(t) => t,
        }
    }
}

/// Noise variance implied by keeping the `l` leading components of the
/// projected spectrum `d` (descending).
pub fn noise_for_rank(l: usize, d: &[f64], tau: f64, trace: f64, n: usize) -> Result<f64> {
    if l >= n {
        return Err(Error::invalid(format!("rank {l} leaves no noise dimensions out of {n}")));
    }
    if l > d.len() {
        return Err(Error::invalid(format!("rank {l} exceeds {} available components", d.len())));
    }
    let kept: f64 = d[..l].iter().map(|v| v - tau).sum();
    Ok((trace - kept) / (n - l) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    /// Eigenvalues of `ΦᵀSΦ`, descending.
    pub projected: Vec<f64>,
    /// Eigenvectors of `ΦᵀSΦ` in matching columns (K×K); `Φ·rotation` is the
    /// basis the variances refer to.
    pub rotation: DMatrix<f64>,
    /// Shrunken component variances, one per projected eigenvalue.
    pub variances: Vec<f64>,
    pub noise_var: f64,
    /// Number of retained components.
    pub rank: usize,
    pub tau: f64,
    pub n_sites: usize,
}

impl CovarianceEstimate {
    /// `Φ·rotation`, restricted to the retained components.
    pub fn retained_basis(&self, phi: &DMatrix<f64>) -> DMatrix<f64> {
        (phi * &self.rotation).columns(0, self.rank).into_owned()
    }

    pub fn retained_variances(&self) -> Vec<f64> {
        self.variances[..self.rank].to_vec()
    }
}

/// Fit component variances and the nugget with eigenvalue shrinkage `tau`.
pub fn estimate_covariance(phi: &DMatrix<f64>, s: &DMatrix<f64>, tau: f64) -> Result<CovarianceEstimate> {
    let n = s.nrows();
    if s.ncols() != n || phi.nrows() != n {
        return Err(Error::dim(format!("basis {:?} against Gram {:?}", phi.shape(), s.shape())));
    }
    if tau < 0.0 {
        return Err(Error::Config(format!("shrinkage {tau} must be non-negative")));
    }
    let k = phi.ncols();
    if k >= n {
        return Err(Error::invalid(format!("basis rank {k} must be below the number of sites {n}")));
    }
    if linalg::orthonormality_error(phi) > 1e-6 {
        return Err(Error::invalid("basis columns are not orthonormal"));
    }
    let projected = linalg::symmetrize(&(phi.transpose() * s * phi));
    let (vals, vecs) = linalg::sym_eigen(&projected)?;
    let d: Vec<f64> = vals.iter().rev().copied().collect();
    let rotation = DMatrix::from_fn(k, k, |i, j| vecs[(i, k - 1 - j)]);
    let trace = s.trace();

    // Largest L whose component still clears the noise level it implies.
    let mut rank = 0;
    for l in (1..=k).rev() {
        let noise = noise_for_rank(l, &d, tau, trace, n)?;
        // Relative slack so exact ties (isotropic spectra) do not pass on rounding.
        if d[l - 1] - tau > noise + 1e-12 * (d[0].abs() + noise.abs()) {
            rank = l;
            break;
        }
    }
    let noise_var = if rank > 0 { noise_for_rank(rank, &d, tau, trace, n)? } else { trace / n as f64 };
    let variances = d
        .iter()
        .enumerate()
        .map(|(i, v)| if i < rank { (v - noise_var - tau).max(0.0) } else { 0.0 })
        .collect();
    Ok(CovarianceEstimate { projected: d, rotation, variances, noise_var, rank, tau, n_sites: n })
}

/// Dense `Φ̃ diag(λ̂) Φ̃ᵀ + σ̂² I`.
pub fn materialize_sigma(est: &CovarianceEstimate, phi: &DMatrix<f64>) -> DMatrix<f64> {
    let basis = est.retained_basis(phi);
    let lam = DVector::from_vec(est.retained_variances());
    let low = &basis * DMatrix::from_diagonal(&lam) * basis.transpose();
    linalg::symmetrize(&low) + DMatrix::identity(est.n_sites, est.n_sites) * est.noise_var
}
