//! Plug-in kriging under the fitted low-rank-plus-nugget covariance.

use nalgebra::{DMatrix, DVector};

use crate::covariance::CovarianceEstimate;
use crate::error::{Error, Result};
use crate::firststage::sigmoid;

/// Observed site indices with their residual values for one repetition.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub indices: Vec<usize>,
    pub values: DVector<f64>,
}

impl ObservationSet {
    pub fn new(indices: Vec<usize>, values: DVector<f64>, n_sites: usize) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::dim(format!("{} indices for {} values", indices.len(), values.len())));
        }
        let mut seen = vec![false; n_sites];
        for &i in &indices {
            if i >= n_sites {
                return Err(Error::invalid(format!("observation index {i} out of range for {n_sites} sites")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!("observation index {i} repeated")));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite observation"));
        }
        Ok(ObservationSet { indices, values })
    }
}

/// Which algebraic form computes the conditional score covariance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SolvePath {
    /// Woodbury when fewer observations than components, direct otherwise.
    #[default]
    Auto,
    Direct,
    Woodbury,
}

/// Posterior covariance of the scores given observations with basis rows
/// `phi_obs` (|O|×L): `(Λ⁻¹ + σ⁻² Φ_Oᵀ Φ_O)⁻¹`.
pub fn conditional_score_cov(variances: &[f64], noise_var: f64, phi_obs: &DMatrix<f64>, path: SolvePath) -> Result<DMatrix<f64>> {
    let l = variances.len();
    if phi_obs.ncols() != l {
        return Err(Error::dim(format!("basis rows have {} columns for {l} components", phi_obs.ncols())));
    }
    if !(noise_var > 0.0) {
        return Err(Error::invalid(format!("noise variance {noise_var} must be positive")));
    }
    if variances.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("retained component variances must be positive"));
    }
    let woodbury = match path {
        SolvePath::Auto => phi_obs.nrows() < l,
        SolvePath::Direct => false,
        SolvePath::Woodbury => true,
    };
    let lam = DMatrix::from_diagonal(&DVector::from_column_slice(variances));
    let out = if woodbury {
        let m = phi_obs.nrows();
        let inner = phi_obs * &lam * phi_obs.transpose() + DMatrix::identity(m, m) * noise_var;
        let chol = inner.cholesky().ok_or_else(|| Error::Numerical("observation covariance not positive definite".into()))?;
        let b = phi_obs * &lam;
        &lam - b.transpose() * chol.solve(&b)
    } else {
        let prec = DMatrix::from_diagonal(&DVector::from_iterator(l, variances.iter().map(|v| 1.0 / v)))
            + phi_obs.transpose() * phi_obs / noise_var;
        prec.cholesky().ok_or_else(|| Error::Numerical("score precision not positive definite".into()))?.inverse()
    };
    Ok((&out + out.transpose()) * 0.5)
}

/// Posterior mean of the scores, `σ⁻² Λ_cond Φ_Oᵀ r_O`.
pub fn conditional_scores(cond_cov: &DMatrix<f64>, noise_var: f64, phi_obs: &DMatrix<f64>, r_obs: &DVector<f64>) -> Result<DVector<f64>> {
    if phi_obs.nrows() != r_obs.len() {
        return Err(Error::dim(format!("{} basis rows for {} observations", phi_obs.nrows(), r_obs.len())));
    }
    Ok(cond_cov * (phi_obs.transpose() * r_obs) / noise_var)
}

pub fn krige_mean(trend: f64, phi_query: &DVector<f64>, scores: &DVector<f64>) -> f64 {
    trend + phi_query.dot(scores)
}

pub fn krige_variance(phi_query: &DVector<f64>, cond_cov: &DMatrix<f64>, noise_var: f64) -> f64 {
    noise_var + phi_query.dot(&(cond_cov * phi_query))
}

/// Inverse standard normal CDF (Acklam's rational approximation, relative
/// error below 1.2e-9).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [-3.969683028665376e1, 2.209460984245205e2, -2.759285104469687e2, 1.383577518672690e2, -3.066479806614716e1, 2.506628277459239];
    const B: [f64; 5] = [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [-7.784894002430293e-3, -3.223964580411365e-1, -2.400758277161838, -2.549732539343734, 4.374664141464968, 2.938163982698783];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let low = 0.02425;
    if p < low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

/// Central `1 - alpha` interval `η ± z √v`.
pub fn gaussian_interval(eta: f64, var: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    if !(var >= 0.0) {
        return Err(Error::invalid(format!("variance {var} must be non-negative")));
    }
    let half = normal_quantile(1.0 - alpha / 2.0) * var.sqrt();
    Ok((eta - half, eta + half))
}

/// Sigmoid image of the Gaussian latent interval: a range for the
/// probability, not for the binary outcome.
pub fn logistic_interval(eta: f64, var: f64, alpha: f64) -> Result<(f64, f64)> {
    let (lo, hi) = gaussian_interval(eta, var, alpha)?;
    Ok((sigmoid(lo), sigmoid(hi)))
}

/// Mean and variance of a kriging prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub var: f64,
}

/// Kriging engine for a fitted basis and covariance estimate. Only the
/// retained components enter the conditioning.
#[derive(Clone, Debug)]
pub struct Kriger {
    rotation: DMatrix<f64>,
    basis: DMatrix<f64>,
    variances: Vec<f64>,
    noise_var: f64,
}

impl Kriger {
    pub fn new(phi: &DMatrix<f64>, est: &CovarianceEstimate) -> Result<Self> {
        if phi.ncols() != est.rotation.nrows() || phi.nrows() != est.n_sites {
            return Err(Error::dim("basis does not match covariance estimate".to_string()));
        }
        Ok(Kriger {
            rotation: est.rotation.columns(0, est.rank).into_owned(),
            basis: est.retained_basis(phi),
            variances: est.retained_variances(),
            noise_var: est.noise_var,
        })
    }

    pub fn rank(&self) -> usize {
        self.variances.len()
    }

    /// Predict at query sites whose (unrotated) basis rows are `query_phi`
    /// (Q×K), adding the per-query trend.
    pub fn predict(&self, obs: &ObservationSet, query_phi: &DMatrix<f64>, trend: &[f64], path: SolvePath) -> Result<Vec<Prediction>> {
        if query_phi.nrows() != trend.len() {
            return Err(Error::dim(format!("{} query rows for {} trend values", query_phi.nrows(), trend.len())));
        }
        if query_phi.ncols() != self.rotation.nrows() {
            return Err(Error::dim(format!("query basis has {} columns, model {}", query_phi.ncols(), self.rotation.nrows())));
        }
        if obs.indices.iter().any(|&i| i >= self.basis.nrows()) {
            return Err(Error::invalid("observation index outside the fitted sites"));
        }
        if self.rank() == 0 {
            return Ok(trend.iter().map(|&m| Prediction { mean: m, var: self.noise_var }).collect());
        }
        let phi_obs = self.basis.select_rows(obs.indices.iter());
        let cond = conditional_score_cov(&self.variances, self.noise_var, &phi_obs, path)?;
        let scores = conditional_scores(&cond, self.noise_var, &phi_obs, &obs.values)?;
        let q = query_phi * &self.rotation;
        Ok((0..q.nrows())
            .map(|r| {
                let row = q.row(r).transpose();
                Prediction { mean: krige_mean(trend[r], &row, &scores), var: krige_variance(&row, &cond, self.noise_var) }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(m: usize, l: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, l, |i, j| ((i * 3 + j * 5) as f64 * 0.41).sin() * 0.4)
    }

    #[test]
    fn quantiles() {
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-8);
        assert!((normal_quantile(0.995) - 2.5758293035489004).abs() < 1e-8);
        assert!((normal_quantile(0.9) - 1.2815515655446004).abs() < 1e-8);
        assert!((normal_quantile(0.001) + 3.090232306167813).abs() < 1e-8);
        assert_eq!(normal_quantile(0.5), 0.0);
    }

    #[test]
    fn interval_examples() {
        let (lo, hi) = gaussian_interval(0.0, 1.0, 0.05).unwrap();
        assert!((hi - 1.959964).abs() < 1e-6 && (lo + hi).abs() < 1e-15);
        let (plo, phi) = logistic_interval(0.0, 1.0, 0.05).unwrap();
        assert!((plo - 0.1235).abs() < 1e-4 && (phi - 0.8765).abs() < 1e-4);
        assert_eq!((plo, phi), (sigmoid(lo), sigmoid(hi)));
        assert!(gaussian_interval(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn woodbury_agrees_with_direct() {
        let lam = [4.0, 2.0, 0.5];
        for m in [1, 2, 3, 7] {
            let p = rows(m, 3);
            let a = conditional_score_cov(&lam, 0.3, &p, SolvePath::Direct).unwrap();
            let b = conditional_score_cov(&lam, 0.3, &p, SolvePath::Woodbury).unwrap();
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn no_observations_returns_prior() {
        let c = conditional_score_cov(&[4.0, 2.0], 1.0, &DMatrix::zeros(0, 2), SolvePath::Auto).unwrap();
        assert!((c - DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 2.0]))).norm() < 1e-12);
    }

    #[test]
    fn matches_joint_gaussian_conditioning() {
        // Oracle: condition the joint Gaussian of (y_O, y_q) on y_O directly.
        let (n, l) = (9, 2);
        let basis = rows(n, l);
        let lam = [3.0, 1.2];
        let noise = 0.7;
        let lm = DMatrix::from_diagonal(&DVector::from_column_slice(&lam));
        let sigma = &basis * &lm * basis.transpose() + DMatrix::identity(n, n) * noise;
        let obs: Vec<usize> = vec![0, 2, 3, 5, 8];
        let q = 6;
        let r = DVector::from_iterator(obs.len(), obs.iter().map(|&i| (i as f64 * 0.9).cos()));
        let s_oo = sigma.select_rows(obs.iter()).select_columns(obs.iter());
        let s_qo = DVector::from_iterator(obs.len(), obs.iter().map(|&i| sigma[(q, i)]));
        let inv = s_oo.try_inverse().unwrap();
        let mean = s_qo.dot(&(&inv * &r));
        let var = sigma[(q, q)] - s_qo.dot(&(&inv * &s_qo));

        let phi_o = basis.select_rows(obs.iter());
        let cond = conditional_score_cov(&lam, noise, &phi_o, SolvePath::Auto).unwrap();
        let scores = conditional_scores(&cond, noise, &phi_o, &r).unwrap();
        let row = basis.row(q).transpose();
        assert!((krige_mean(0.0, &row, &scores) - mean).abs() < 1e-10);
        assert!((krige_variance(&row, &cond, noise) - var).abs() < 1e-10);
    }

    #[test]
    fn observation_validation() {
        assert!(ObservationSet::new(vec![0, 0], DVector::zeros(2), 3).is_err());
        assert!(ObservationSet::new(vec![3], DVector::zeros(1), 3).is_err());
        assert!(ObservationSet::new(vec![1], DVector::zeros(2), 3).is_err());
        assert!(ObservationSet::new(vec![2, 0], DVector::zeros(2), 3).is_ok());
    }
}
