//! Synthetic benchmark: five smooth meteorological covariates, a planted
//! rank-one spatial mode with AR(1) scores, and white noise.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Covariates, Link, SpatialDataset, Split};
use crate::error::{Error, Result};
use crate::geometry::LocationSet;

pub const BETA: [f64; 5] = [10.0, -9.5, 2.6, -1.3, 1.2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n_sites: usize,
    pub n_times: usize,
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub noise_sd: f64,
    pub score_ar: f64,
    pub score_sd: f64,
    pub global_drift: bool,
    pub site_range: (f64, f64),
    pub covariate_noise_sd: f64,
    pub site_jitter_sd: f64,
    /// Threshold responses at their median and switch to the sigmoid link.
    pub binary: bool,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n_sites: 512,
            n_times: 1024,
            beta: BETA.to_vec(),
            intercept: 50.0,
            noise_sd: 4.0,
            score_ar: 0.8,
            score_sd: 5.0,
            global_drift: false,
            site_range: (-5.0, 5.0),
            covariate_noise_sd: 0.1,
            site_jitter_sd: 0.01,
            binary: false,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 3 || self.n_times < 2 {
            return Err(Error::Config(format!("need N >= 3 and T >= 2, got {}x{}", self.n_sites, self.n_times)));
        }
        if self.score_ar.abs() >= 1.0 {
            return Err(Error::Config(format!("AR coefficient {} is not stationary", self.score_ar)));
        }
        if self.noise_sd < 0.0 || self.score_sd < 0.0 || self.covariate_noise_sd < 0.0 || self.site_jitter_sd < 0.0 {
            return Err(Error::Config("standard deviations must be non-negative".into()));
        }
        if self.beta.len() != 5 {
            return Err(Error::Config(format!("beta must have 5 entries, got {}", self.beta.len())));
        }
        if self.site_range.0 >= self.site_range.1 {
            return Err(Error::Config("empty site range".into()));
        }
        Ok(())
    }
}

/// A generated dataset with its ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub dataset: SpatialDataset,
    pub phi: DVector<f64>,
    pub scores: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub beta: Vec<f64>,
}

/// Unit-norm Gaussian bump `exp(-s²)` on the sites.
pub fn planted_mode(locs: &LocationSet) -> DVector<f64> {
    let v = DVector::from_iterator(locs.len(), locs.coords().column(0).iter().map(|s| (-s * s).exp()));
    let norm = v.norm();
    v / norm
}

/// Population covariance `score_sd² φφᵀ + noise_sd² I`.
pub fn true_covariance(phi: &DVector<f64>, score_sd: f64, noise_sd: f64) -> DMatrix<f64> {
    let n = phi.len();
    phi * phi.transpose() * score_sd.powi(2) + DMatrix::identity(n, n) * noise_sd.powi(2)
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("validated standard deviation")
}

/// Draw a dataset. Randomness is consumed in a fixed order: covariates, then
/// drifts, then observation noise.
pub fn generate(cfg: &DgpConfig, seed: u64, split: Split) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let (n, t) = (cfg.n_sites, cfg.n_times);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let locs = LocationSet::equispaced_1d(n, cfg.site_range.0, cfg.site_range.1)?;
    let phi = planted_mode(&locs);

    let cov_noise = normal(0.0, cfg.covariate_noise_sd);
    let wind_dist = normal(3.0, cfg.covariate_noise_sd);
    let jitter = normal(0.0, cfg.site_jitter_sd);
    let pdf = |x: f64| (-(x - std::f64::consts::PI).powi(2) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut base = Vec::with_capacity(t);
    for j in 0..t {
        let time = 2.0 * std::f64::consts::PI * j as f64 / (t - 1) as f64;
        let temp = 15.0 + 10.0 * time.sin() + cov_noise.sample(&mut rng);
        let wind = wind_dist.sample(&mut rng).abs();
        let hum = 70.0 - 0.5 * temp + cov_noise.sample(&mut rng);
        let pres = 1000.0 + 20.0 * pdf(time);
        let poll = 50.0 + 2.0 * temp - 3.0 * wind + cov_noise.sample(&mut rng);
        base.push([temp, wind, hum, pres, poll]);
    }
    let mut x = Covariates::zeros(t, n, 5);
    for (j, row) in base.iter().enumerate() {
        for i in 0..n {
            for (slot, v) in x.at_mut(j, i).iter_mut().zip(row) {
                *slot = v + jitter.sample(&mut rng);
            }
        }
    }

    let mut drift = vec![0.0; t];
    if cfg.global_drift {
        let innov = normal(0.0, (1.0 - 0.6f64.powi(2)).sqrt());
        drift[0] = normal(0.0, 1.0).sample(&mut rng);
        for j in 1..t {
            drift[j] = 0.6 * drift[j - 1] + innov.sample(&mut rng);
        }
    }
    let innov = normal(0.0, cfg.score_sd * (1.0 - cfg.score_ar.powi(2)).sqrt());
    let mut scores = DVector::zeros(t);
    scores[0] = normal(0.0, cfg.score_sd).sample(&mut rng);
    for j in 1..t {
        scores[j] = cfg.score_ar * scores[j - 1] + innov.sample(&mut rng);
    }

    let eps = normal(0.0, cfg.noise_sd);
    let mut y = DMatrix::zeros(t, n);
    for j in 0..t {
        for i in 0..n {
            let trend: f64 = x.at(j, i).iter().zip(&cfg.beta).map(|(a, b)| a * b).sum();
            y[(j, i)] = cfg.intercept + trend + drift[j] + scores[j] * phi[i] + eps.sample(&mut rng);
        }
    }

    let link = if cfg.binary {
        let mut all: Vec<f64> = y.iter().copied().collect();
        all.sort_by(f64::total_cmp);
        let median = if all.len() % 2 == 1 {
            all[all.len() / 2]
        } else {
            0.5 * (all[all.len() / 2 - 1] + all[all.len() / 2])
        };
        y.apply(|v| *v = if *v > median { 1.0 } else { 0.0 });
        Link::Sigmoid
    } else {
        Link::Identity
    };

    let dataset = SpatialDataset { y, x, locations: locs, link, split, mask: None, first_stage: None };
    dataset.validate()?;
    let sigma = true_covariance(&phi, cfg.score_sd, cfg.noise_sd);
    Ok(SyntheticDataset { dataset, phi, scores, sigma, beta: cfg.beta.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DgpConfig {
        DgpConfig { n_sites: 16, n_times: 50, ..Default::default() }
    }

    #[test]
    fn degenerate_dgp_is_the_linear_trend() {
        let cfg = DgpConfig { noise_sd: 0.0, score_sd: 0.0, ..small() };
        let d = generate(&cfg, 3, Split::contiguous(50, 0.7, 0.15).unwrap()).unwrap();
        for j in 0..50 {
            for i in 0..16 {
                let lin: f64 = d.dataset.x.at(j, i).iter().zip(BETA).map(|(a, b)| a * b).sum();
                assert!((d.dataset.y[(j, i)] - 50.0 - lin).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn covariance_structure() {
        let d = generate(&small(), 1, Split::contiguous(50, 0.7, 0.15).unwrap()).unwrap();
        assert!((d.phi.norm() - 1.0).abs() < 1e-12);
        assert!((d.sigma.trace() - (25.0 + 16.0 * 16.0)).abs() < 1e-9);
        assert!((d.sigma[(2, 5)] - 25.0 * d.phi[2] * d.phi[5]).abs() < 1e-12);
        assert!((d.sigma[(3, 3)] - (25.0 * d.phi[3].powi(2) + 16.0)).abs() < 1e-12);
    }

    #[test]
    fn score_moments() {
        let cfg = DgpConfig { n_sites: 3, n_times: 10_000, ..Default::default() };
        let d = generate(&cfg, 11, Split::contiguous(10_000, 0.7, 0.15).unwrap()).unwrap();
        let a = &d.scores;
        let mean = a.mean();
        let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (a.len() - 1) as f64;
        let lag: f64 = (1..a.len()).map(|j| (a[j] - mean) * (a[j - 1] - mean)).sum::<f64>()
            / (a.len() - 1) as f64;
        assert!((var.sqrt() - 5.0).abs() < 0.25, "sd {}", var.sqrt());
        assert!((lag / var - 0.8).abs() < 0.05, "acf {}", lag / var);
    }

    #[test]
    fn seeds_reproduce() {
        let s = Split::contiguous(50, 0.7, 0.15).unwrap();
        let a = generate(&small(), 9, s.clone()).unwrap();
        let b = generate(&small(), 9, s.clone()).unwrap();
        let c = generate(&small(), 10, s).unwrap();
        assert_eq!(a.dataset.y, b.dataset.y);
        assert_ne!(a.dataset.y, c.dataset.y);
    }

    #[test]
    fn binary_variant_is_balanced() {
        let cfg = DgpConfig { binary: true, ..small() };
        let d = generate(&cfg, 2, Split::contiguous(50, 0.7, 0.15).unwrap()).unwrap();
        assert_eq!(d.dataset.link, Link::Sigmoid);
        let ones = d.dataset.y.sum();
        assert!((ones - 400.0).abs() <= 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(DgpConfig { score_ar: 1.0, ..small() }.validate().is_err());
        assert!(DgpConfig { n_times: 1, ..small() }.validate().is_err());
    }
}
