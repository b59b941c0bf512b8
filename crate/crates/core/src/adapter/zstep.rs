//! Consensus (Z) updates and the basis-step targets built from them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::firststage::sigmoid;
use crate::linalg;

/// Exact minimiser of `‖Z P⊥‖² + (ρ/2)‖Z - Res‖²` with `P = ΦΦᵀ`:
/// the in-basis part of `Res` is kept, the rest shrunk by `ρ/(ρ+2)`.
pub fn z_update_gaussian(res: &DMatrix<f64>, phi: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    if res.ncols() != phi.nrows() {
        return Err(Error::dim(format!("residual has {} sites, basis {}", res.ncols(), phi.nrows())));
    }
    if rho <= 0.0 {
        return Err(Error::Config(format!("rho must be positive, got {rho}")));
    }
    let shrink = rho / (rho + 2.0);
    let projected = (res * phi) * phi.transpose();
    Ok(res * shrink + projected * (1.0 - shrink))
}

/// Off-basis part `Z (I - ΦΦᵀ)`.
pub fn off_basis(z: &DMatrix<f64>, phi: &DMatrix<f64>) -> DMatrix<f64> {
    z - (z * phi) * phi.transpose()
}

/// Gradient steps on `Σ BCE(σ(Z P⊥), Y) + (ρ / 2LN) ‖Z - Res‖²`.
pub fn z_update_bernoulli(
    z: &DMatrix<f64>,
    y: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    res: &DMatrix<f64>,
    rho: f64,
    step: f64,
    inner: usize,
) -> Result<DMatrix<f64>> {
    if z.shape() != y.shape() || z.shape() != res.shape() || z.ncols() != phi.nrows() {
        return Err(Error::dim("Bernoulli Z-update operands disagree in shape".to_string()));
    }
    if step <= 0.0 || rho <= 0.0 {
        return Err(Error::Config("step and rho must be positive".into()));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("Bernoulli Z-update needs 0/1 labels"));
    }
    let coupling = rho / (z.len().max(1) as f64);
    let mut z = z.clone();
    for _ in 0..inner {
        let x = off_basis(&z, phi);
        let resid = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| sigmoid(x[(i, j)]) - y[(i, j)]);
        let grad = off_basis(&resid, phi) + (&z - res) * coupling;
        z -= grad * step;
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("Bernoulli Z-update produced non-finite values".into()));
    }
    Ok(z)
}

/// Which quadratic target drives the basis step for binary data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BceVariant {
    /// Centered Gram of Z.
    #[default]
    A,
    /// Uncentered quadratic bound of the cross-entropy at zero.
    B,
    /// Centered Gram of the IRLS working response.
    C,
}

/// Basis-step target matrix (N×N). For the identity link only variant A
/// applies and `y` is ignored.
pub fn surrogate_target(variant: BceVariant, z: &DMatrix<f64>, y: Option<&DMatrix<f64>>, weight_eps: f64) -> Result<DMatrix<f64>> {
    let labels = || -> Result<&DMatrix<f64>> {
        let y = y.ok_or_else(|| Error::invalid("variant needs labels"))?;
        if y.shape() != z.shape() {
            return Err(Error::dim("labels and consensus differ in shape".to_string()));
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("variant needs 0/1 labels"));
        }
        Ok(y)
    };
    match variant {
        BceVariant::A => {
            let zc = linalg::center_columns(z);
            Ok(linalg::mul_tn(&zc, &zc))
        }
        BceVariant::B => {
            let y = labels()?;
            let half = y.map(|v| 0.5 - v);
            let cross = linalg::symmetrize(&linalg::mul_tn(&half, z));
            Ok(cross + linalg::mul_tn(z, z) * 0.125)
        }
        BceVariant::C => {
            let y = labels()?;
            let working = working_response(z, y, weight_eps);
            let wc = linalg::center_columns(&working);
            Ok(linalg::mul_tn(&wc, &wc))
        }
    }
}

/// `Z + (Y - σ(Z)) / (σ(Z)(1 - σ(Z)) + eps)`.
pub fn working_response(z: &DMatrix<f64>, y: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| {
        let s = sigmoid(z[(i, j)]);
        z[(i, j)] + (y[(i, j)] - s) / (s * (1.0 - s) + eps)
    })
}
