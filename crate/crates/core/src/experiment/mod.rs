//! Experiment runners behind the command-line tool: synthetic benchmark,
//! regularisation path, spatial hold-out, cross-entropy ablation and
//! penalty tuning.

mod ablation;
mod holdout;
mod synthetic;
mod tune;

pub use ablation::{run_ablation, run_ablation_seed, AblationRun};
pub use holdout::{run_holdout, run_holdout_seed, HoldoutRun};
pub use synthetic::{path_table, run_reg_path, run_synthetic, sweep_seed, FitSummary, OlsSummary, PathRow, SeedSweep};
pub use tune::{tune, Objective, TuneReport, TuneSpec, TuneTrial};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::{fit_adapter, AdapterConfig, AdapterModel};
use crate::covariance::{estimate_covariance, materialize_sigma, residual_gram, CovarianceEstimate};
use crate::dataio::config::{ExperimentConfig, FirstStageKind};
use crate::dataset::{read_dataset, SpatialDataset, Split};
use crate::error::{Error, Result};
use crate::firststage::{fit_ols, warmup_trend, FirstStage, TrendModel};
use crate::geometry::{build_roughness, RoughnessMatrix};
use crate::synth::{generate, SyntheticDataset};

/// Log-spaced penalty grid for the regularisation path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec { lo: 1e-3, hi: 1e7, points: 6 }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.hi > self.lo) || self.points < 2 {
            return Err(Error::Config(format!("bad sweep [{}, {}] with {} points", self.lo, self.hi, self.points)));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let (a, b) = (self.lo.log10(), self.hi.log10());
        (0..self.points)
            .map(|k| 10f64.powf(a + (b - a) * k as f64 / (self.points - 1) as f64))
            .collect()
    }
}

/// Everything fitted once per dataset before any adapter run.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub data: SpatialDataset,
    pub first: FirstStage,
    pub trend: TrendModel,
    pub roughness: RoughnessMatrix,
}

/// The configured dataset: read from disk, or simulated with `seed`.
pub fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<(SpatialDataset, Option<SyntheticDataset>)> {
    let (mut ds, truth) = match &cfg.data_dir {
        Some(dir) => (read_dataset(dir)?, None),
        None => {
            let split = Split::contiguous(cfg.dgp.n_times, cfg.split.train, cfg.split.val)?;
            let synth = generate(&cfg.dgp, seed, split)?;
            (synth.dataset.clone(), Some(synth))
        }
    };
    if cfg.standardize {
        ds.standardize_response()?;
    }
    Ok((ds, truth))
}

/// Fit the first stage, warm up the trend and build the penalty.
pub fn prepare(cfg: &ExperimentConfig, data: SpatialDataset, seed: u64) -> Result<Pipeline> {
    let rows = data.split.train.clone();
    let first = match cfg.first_stage {
        FirstStageKind::Ols => fit_ols(&data, &rows)?.stage,
        FirstStageKind::External => FirstStage::External,
        FirstStageKind::Zero => FirstStage::Zero,
    };
    let fresh = TrendModel::new(&cfg.trend, &data.x, &rows, seed)?;
    let trend = warmup_trend(&fresh, &data, &first, &cfg.warmup, seed)?;
    let roughness = build_roughness(&data.locations)?;
    Ok(Pipeline { data, first, trend, roughness })
}

pub fn adapter_config(cfg: &ExperimentConfig, seed: u64, lambda1: f64, lambda2: f64) -> AdapterConfig {
    AdapterConfig { lambda1, lambda2, seed, ..cfg.adapter.clone() }
}

impl Pipeline {
    pub fn fit(&self, cfg: &AdapterConfig) -> Result<AdapterModel> {
        fit_adapter(&self.data, &self.first, &self.trend, &self.roughness, cfg)
    }

    /// Covariance estimate from the training residuals of a fitted model.
    pub fn covariance(&self, model: &AdapterModel, tau: f64) -> Result<(CovarianceEstimate, DMatrix<f64>)> {
        let r = model.residuals(&self.data, &self.data.split.train)?;
        let est = estimate_covariance(&model.phi, &residual_gram(&r)?, tau)?;
        let sigma = materialize_sigma(&est, &model.phi);
        Ok((est, sigma))
    }
}

/// Run `f` for each seed, in parallel when a pool is available; results come
/// back in seed order.
pub fn for_seeds<T: Send>(seeds: &[u64], f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    seeds.par_iter().map(|&s| f(s)).collect()
}

pub(crate) fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile of finite values.
pub(crate) fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_log_spaced() {
        let g = SweepSpec { lo: 1e-2, hi: 1e2, points: 5 }.grid();
        let want = [1e-2, 1e-1, 1.0, 1e1, 1e2];
        for (a, b) in g.iter().zip(want) {
            assert!((a / b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
    }
}
