use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adapter_config, for_seeds, load_data, prepare};
use crate::dataio::config::ExperimentConfig;
use crate::dataio::results::ResultsRecord;
use crate::dataset::Link;
use crate::error::{Error, Result};
use crate::geometry::extend_basis;
use crate::metrics::{coverage, entries_for_rows, pointwise};
use crate::predict::{gaussian_interval, Kriger, ObservationSet, SolvePath};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutRun {
    pub seed: u64,
    pub held_out: Vec<usize>,
    pub first_stage_rmse: f64,
    pub unreg_rmse: f64,
    pub reg_rmse: f64,
    /// Interval coverage and mean width of the regularised fit.
    pub coverage: f64,
    pub mpiw: f64,
    /// Largest deviation of the extended basis from the fitted one on the
    /// training sites.
    pub extension_error: f64,
}

/// Sites withheld for a seed, sorted.
pub fn held_out_sites(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let count = ((n as f64) * fraction).round().clamp(1.0, (n - 1) as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5175);
    let mut idx = sample(&mut rng, n, count).into_vec();
    idx.sort_unstable();
    idx
}

/// Withhold a random subset of sites, fit on the rest, and krige the
/// withheld sites on the test rows.
pub fn run_holdout_seed(cfg: &ExperimentConfig, seed: u64) -> Result<HoldoutRun> {
    let (data, _) = load_data(cfg, seed)?;
    if data.link != Link::Identity {
        return Err(Error::Config("spatial hold-out is defined for continuous responses".into()));
    }
    let n = data.n_sites();
    let held = held_out_sites(n, cfg.holdout.fraction, seed);
    let kept: Vec<usize> = (0..n).filter(|i| held.binary_search(i).is_err()).collect();
    let sub = data.select_sites(&kept)?;
    let pipe = prepare(cfg, sub, seed)?;
    let test = data.split.test.clone();
    let fitted = pipe.first.predict(&data, &test)? + pipe.trend.predict(&data.x, &test);
    let truth = data.y.select_rows(test.iter()).select_columns(held.iter());
    let baseline = fitted.select_columns(held.iter());
    let idx = entries_for_rows(&(0..test.len()).collect::<Vec<_>>(), held.len());
    let first_stage_rmse = pointwise(&truth, &baseline, &idx)?.rmse;
    let query = data.locations.coords().select_rows(held.iter());

    let mut rmse = [0.0; 2];
    let mut cov = (f64::NAN, f64::NAN);
    let mut extension_error = f64::NAN;
    for (slot, lambda) in [cfg.unreg_lambda, cfg.reg_lambda].into_iter().enumerate() {
        let model = pipe.fit(&adapter_config(cfg, seed, lambda, lambda))?;
        let (est, _) = pipe.covariance(&model, cfg.shrinkage.resolve(lambda))?;
        let kriger = Kriger::new(&model.phi, &est)?;
        let q_phi = extend_basis(&pipe.data.locations, &model.phi, &query)?;
        let resid = model.residuals(&pipe.data, &test)?;
        let mean_part = (model.first_stage.predict(&data, &test)? + model.trend.predict(&data.x, &test)).select_columns(held.iter());
        let mut pred = DMatrix::zeros(test.len(), held.len());
        let mut lo = pred.clone();
        let mut hi = pred.clone();
        for r in 0..test.len() {
            let obs = ObservationSet::new((0..kept.len()).collect(), DVector::from_iterator(kept.len(), resid.row(r).iter().copied()), kept.len())?;
            let trend: Vec<f64> = mean_part.row(r).iter().copied().collect();
            for (q, p) in kriger.predict(&obs, &q_phi, &trend, SolvePath::Auto)?.into_iter().enumerate() {
                pred[(r, q)] = p.mean;
                let (a, b) = gaussian_interval(p.mean, p.var, cfg.alpha)?;
                lo[(r, q)] = a;
                hi[(r, q)] = b;
            }
        }
        rmse[slot] = pointwise(&truth, &pred, &idx)?.rmse;
        if slot == 1 {
            cov = coverage(&truth, &lo, &hi, &idx)?;
            let back = extend_basis(&pipe.data.locations, &model.phi, pipe.data.locations.coords())?;
            extension_error = (back - &model.phi).abs().max();
        }
    }
    Ok(HoldoutRun {
        seed,
        held_out: held,
        first_stage_rmse,
        unreg_rmse: rmse[0],
        reg_rmse: rmse[1],
        coverage: cov.0,
        mpiw: cov.1,
        extension_error,
    })
}

pub fn run_holdout(cfg: &ExperimentConfig) -> Result<(Vec<HoldoutRun>, Vec<ResultsRecord>)> {
    let runs = for_seeds(&cfg.seeds(), |s| run_holdout_seed(cfg, s))?;
    let hash = cfg.hash();
    let records = runs
        .iter()
        .map(|r| {
            ResultsRecord::new("holdout", r.seed, &hash)
                .with("first_stage_rmse", r.first_stage_rmse)
                .with("unreg_rmse", r.unreg_rmse)
                .with("reg_rmse", r.reg_rmse)
                .with("coverage", r.coverage)
                .with("mpiw", r.mpiw)
                .with("extension_error", r.extension_error)
        })
        .collect();
    Ok((runs, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn held_out_sites_are_deterministic() {
        let a = held_out_sites(50, 0.2, 3);
        assert_eq!(a.len(), 10);
        assert_eq!(a, held_out_sites(50, 0.2, 3));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }
}
