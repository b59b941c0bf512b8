use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adapter_config, for_seeds, Pipeline};
use crate::adapter::{reconstruct, AdapterModel};
use crate::dataio::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{cov_frob, entries_for_rows, pointwise, sample_covariance, semivariogram, sv_score, SemivariogramConfig};

/// Validation criterion minimised by the search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Rmse,
    CovFrob,
    SvScore,
}

/// Random search over both penalties, log-uniform on `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneSpec {
    pub lo: f64,
    pub hi: f64,
    pub trials: usize,
    pub objective: Objective,
}

impl Default for TuneSpec {
    fn default() -> Self {
        TuneSpec { lo: 1e-4, hi: 1e8, trials: 50, objective: Objective::Rmse }
    }
}

impl TuneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.hi >= self.lo) {
            return Err(Error::Config(format!("bad search range [{}, {}]", self.lo, self.hi)));
        }
        if self.trials == 0 {
            return Err(Error::Config("need at least one trial".into()));
        }
        Ok(())
    }

    /// The penalty pairs a search with `seed` will try, in order.
    pub fn candidates(&self, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (self.lo.log10(), self.hi.log10());
        let mut draw = || if b > a { 10f64.powf(rng.random_range(a..b)) } else { self.lo };
        (0..self.trials).map(|_| (draw(), draw())).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneTrial {
    pub lambda1: f64,
    pub lambda2: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub trials: Vec<TuneTrial>,
    pub best: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub test_rmse: f64,
    pub test_cov_frob: f64,
    pub test_sv_score: f64,
}

/// RMSE, CovFrob and semivariogram score of a model on some rows.
fn score(pipe: &Pipeline, model: &AdapterModel, tau: f64, rows: &[usize]) -> Result<[f64; 3]> {
    let ds = &pipe.data;
    let recon = reconstruct(model, ds, rows)?;
    let observed = ds.y.select_rows(rows.iter());
    let idx = entries_for_rows(&(0..rows.len()).collect::<Vec<_>>(), ds.n_sites());
    let rmse = pointwise(&observed, &recon, &idx)?.rmse;
    let (_, sigma) = pipe.covariance(model, tau)?;
    let cf = cov_frob(&sigma, &sample_covariance(&model.residuals(ds, rows)?)?)?;
    let sv_cfg = SemivariogramConfig::default();
    let sv = sv_score(&semivariogram(&recon, &ds.locations, &sv_cfg)?, &semivariogram(&observed, &ds.locations, &sv_cfg)?, 1e-8)?;
    Ok([rmse, cf, sv])
}

/// Random-search the penalties on the validation rows, then report the
/// selected model on the test rows. Ties go to the earliest trial.
pub fn tune(cfg: &ExperimentConfig, pipe: &Pipeline, spec: &TuneSpec, seed: u64) -> Result<TuneReport> {
    spec.validate()?;
    if pipe.data.split.val.len() < 2 || pipe.data.split.test.len() < 2 {
        return Err(Error::Config("tuning needs validation and test rows".into()));
    }
    let pick = match spec.objective {
        Objective::Rmse => 0,
        Objective::CovFrob => 1,
        Objective::SvScore => 2,
    };
    let candidates = spec.candidates(seed);
    let keys: Vec<u64> = (0..candidates.len() as u64).collect();
    // A diverged trial scores +inf instead of aborting the search.
    let evaluated = for_seeds(&keys, |k| {
        let (l1, l2) = candidates[k as usize];
        let fitted = pipe
            .fit(&adapter_config(cfg, seed, l1, l2))
            .and_then(|m| score(pipe, &m, cfg.shrinkage.resolve(l1), &pipe.data.split.val).map(|v| (m, v[pick])));
        Ok(match fitted {
            Ok((m, v)) if v.is_finite() => (Some(m), v),
            Ok(_) => (None, f64::INFINITY),
            Err(e) => {
                log::warn!("trial {k} ({l1:e}, {l2:e}) failed: {e}");
                (None, f64::INFINITY)
            }
        })
    })?;
    let best = evaluated
        .iter()
        .enumerate()
        .fold(0, |b, (i, (_, v))| if *v < evaluated[b].1 { i } else { b });
    let Some(model) = &evaluated[best].0 else {
        return Err(Error::Numerical("every tuning trial failed".into()));
    };
    let (l1, l2) = candidates[best];
    // The fit is deterministic, so the selected trial's model is the refit.
    let test = score(pipe, model, cfg.shrinkage.resolve(l1), &pipe.data.split.test)?;
    Ok(TuneReport {
        trials: candidates
            .iter()
            .zip(&evaluated)
            .map(|(&(lambda1, lambda2), (_, objective))| TuneTrial { lambda1, lambda2, objective: *objective })
            .collect(),
        best,
        lambda1: l1,
        lambda2: l2,
        test_rmse: test[0],
        test_cov_frob: test[1],
        test_sv_score: test[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidates_in_range_and_reproducible() {
        let spec = TuneSpec { lo: 1e-2, hi: 1e3, trials: 50, objective: Objective::Rmse };
        let c = spec.candidates(4);
        assert_eq!(c, spec.candidates(4));
        assert!(c.iter().all(|&(a, b)| (1e-2..=1e3).contains(&a) && (1e-2..=1e3).contains(&b)));
        let degenerate = TuneSpec { lo: 5.0, hi: 5.0, ..spec };
        assert!(degenerate.candidates(1).iter().all(|&p| p == (5.0, 5.0)));
    }
}
