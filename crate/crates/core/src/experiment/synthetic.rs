use serde::{Deserialize, Serialize};

use super::{adapter_config, for_seeds, load_data, median, prepare, quantile};
use crate::adapter::{reconstruct, AdapterModel, AdmmTrace};
use crate::dataio::config::ExperimentConfig;
use crate::dataio::results::ResultsRecord;
use crate::error::Result;
use crate::metrics::{basis_alignment, cov_frob, entries_for_rows, pointwise, sample_covariance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsSummary {
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    /// Sample covariance of training residuals against the truth.
    pub cov_frob: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub lambda1: f64,
    pub lambda2: f64,
    pub rank: usize,
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    pub val_rmse: f64,
    pub cov_frob: Option<f64>,
    pub alignment: Option<f64>,
    pub cov_rank: usize,
    pub noise_var: f64,
    pub converged: bool,
    pub iterations: usize,
    pub final_dual: f64,
    pub final_scale: f64,
    /// At least two sweeps ran with the basis fixed.
    pub reached_freeze: bool,
    /// Primal residual never increased once the basis was fixed.
    pub primal_monotone: bool,
}

/// Per-seed results of fitting one dataset at several penalty settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedSweep {
    pub seed: u64,
    pub ols: OlsSummary,
    pub fits: Vec<FitSummary>,
    /// Trace of the last fit, for plotting.
    pub trace: AdmmTrace,
}

/// Primal residuals from the point the basis stops moving: the scheduled
/// freeze, or the last basis update if the run stopped before it.
fn primal_monotone(trace: &AdmmTrace, freeze: usize) -> (bool, bool) {
    let last_update = trace.records.iter().filter(|r| r.basis_change.is_some()).map(|r| r.iter).max().unwrap_or(0);
    let start = freeze.min(last_update);
    let post: Vec<f64> = trace.records.iter().filter(|r| r.iter >= start).map(|r| r.primal).collect();
    let monotone = post.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-10) + 1e-300);
    (post.len() >= 2, monotone)
}

/// Fit every `(λ₁, λ₂)` pair on the dataset for `seed`.
pub fn sweep_seed(cfg: &ExperimentConfig, seed: u64, penalties: &[(f64, f64)]) -> Result<SeedSweep> {
    let (data, truth) = load_data(cfg, seed)?;
    let pipe = prepare(cfg, data, seed)?;
    let ds = &pipe.data;
    let test = entries_for_rows(&ds.split.test, ds.n_sites());
    let val = entries_for_rows(&ds.split.val, ds.n_sites());
    let first_test = pipe.first.predict(ds, &(0..ds.n_times()).collect::<Vec<_>>())?
        + pipe.trend.predict(&ds.x, &(0..ds.n_times()).collect::<Vec<_>>());
    let pm = pointwise(&ds.y, &first_test, &test)?;
    let ols_cov = match &truth {
        Some(t) => {
            let r = ds.y.select_rows(ds.split.train.iter()) - first_test.select_rows(ds.split.train.iter());
            Some(cov_frob(&sample_covariance(&r)?, &t.sigma)?)
        }
        None => None,
    };
    let ols = OlsSummary { rmse: pm.rmse, mae: pm.mae, r2: pm.r2, cov_frob: ols_cov };

    let all_rows: Vec<usize> = (0..ds.n_times()).collect();
    let mut fits = Vec::with_capacity(penalties.len());
    let mut last: Option<AdapterModel> = None;
    for &(l1, l2) in penalties {
        let acfg = adapter_config(cfg, seed, l1, l2);
        let model = pipe.fit(&acfg)?;
        let recon = reconstruct(&model, ds, &all_rows)?;
        let m = pointwise(&ds.y, &recon, &test)?;
        let val_rmse = if val.is_empty() { f64::NAN } else { pointwise(&ds.y, &recon, &val)?.rmse };
        let (est, sigma) = pipe.covariance(&model, cfg.shrinkage.resolve(l1))?;
        let (cf, align) = match &truth {
            Some(t) => {
                let phi = nalgebra::DMatrix::from_column_slice(t.phi.len(), 1, t.phi.as_slice());
                (Some(cov_frob(&sigma, &t.sigma)?), Some(basis_alignment(&model.phi, &phi)?))
            }
            None => (None, None),
        };
        let (reached_freeze, primal_monotone) = primal_monotone(&model.trace, acfg.schedule.freeze_after);
        let fin = model.trace.last().cloned();
        fits.push(FitSummary {
            lambda1: l1,
            lambda2: l2,
            rank: model.rank(),
            rmse: m.rmse,
            mae: m.mae,
            r2: m.r2,
            val_rmse,
            cov_frob: cf,
            alignment: align,
            cov_rank: est.rank,
            noise_var: est.noise_var,
            converged: model.trace.converged,
            iterations: model.trace.records.len(),
            final_dual: fin.as_ref().map_or(f64::NAN, |r| r.dual),
            final_scale: fin.as_ref().map_or(f64::NAN, |r| r.scale),
            reached_freeze,
            primal_monotone,
        });
        last = Some(model);
    }
    Ok(SeedSweep { seed, ols, fits, trace: last.map(|m| m.trace).unwrap_or_default() })
}

fn fit_metrics(rec: ResultsRecord, prefix: &str, f: &FitSummary) -> ResultsRecord {
    let mut rec = rec
        .with(&format!("{prefix}_rmse"), f.rmse)
        .with(&format!("{prefix}_mae"), f.mae)
        .with(&format!("{prefix}_r2"), f.r2)
        .with(&format!("{prefix}_iterations"), f.iterations as f64);
    if let Some(v) = f.cov_frob {
        rec = rec.with(&format!("{prefix}_cov_frob"), v);
    }
    if let Some(v) = f.alignment {
        rec = rec.with(&format!("{prefix}_alignment"), v);
    }
    rec
}

/// First stage against the adapter at the unregularised and regularised
/// penalties, one record per seed.
pub fn run_synthetic(cfg: &ExperimentConfig) -> Result<(Vec<SeedSweep>, Vec<ResultsRecord>)> {
    let penalties = [(cfg.unreg_lambda, cfg.unreg_lambda), (cfg.reg_lambda, cfg.reg_lambda)];
    let sweeps = for_seeds(&cfg.seeds(), |s| sweep_seed(cfg, s, &penalties))?;
    let hash = cfg.hash();
    let records = sweeps
        .iter()
        .map(|s| {
            let mut rec = ResultsRecord::new("synthetic", s.seed, &hash)
                .with("ols_rmse", s.ols.rmse)
                .with("ols_mae", s.ols.mae)
                .with("ols_r2", s.ols.r2);
            if let Some(v) = s.ols.cov_frob {
                rec = rec.with("ols_cov_frob", v);
            }
            let rec = fit_metrics(rec, "unreg", &s.fits[0]);
            fit_metrics(rec, "reg", &s.fits[1])
        })
        .collect();
    Ok((sweeps, records))
}

/// Median and interquartile range across seeds at one penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub lambda: f64,
    pub alignment: [f64; 3],
    pub cov_frob: [f64; 3],
}

fn spread(v: &[f64]) -> [f64; 3] {
    [quantile(v, 0.25), median(v), quantile(v, 0.75)]
}

/// Summaries per grid penalty and the index of the penalty with the lowest
/// median CovFrob.
pub fn path_table(grid: &[f64], sweeps: &[SeedSweep]) -> (Vec<PathRow>, usize) {
    let rows: Vec<PathRow> = grid
        .iter()
        .enumerate()
        .map(|(g, &lambda)| {
            let al: Vec<f64> = sweeps.iter().filter_map(|s| s.fits[g].alignment).collect();
            let cf: Vec<f64> = sweeps.iter().filter_map(|s| s.fits[g].cov_frob).collect();
            PathRow { lambda, alignment: spread(&al), cov_frob: spread(&cf) }
        })
        .collect();
    let best = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.cov_frob[1].total_cmp(&b.1.cov_frob[1]))
        .map_or(0, |(i, _)| i);
    (rows, best)
}

/// Fit the whole penalty grid (`λ₁ = λ₂ = λ`) for every seed.
pub fn run_reg_path(cfg: &ExperimentConfig) -> Result<(Vec<SeedSweep>, Vec<PathRow>, usize)> {
    let grid = cfg.sweep.grid();
    let penalties: Vec<(f64, f64)> = grid.iter().map(|&l| (l, l)).collect();
    let sweeps = for_seeds(&cfg.seeds(), |s| sweep_seed(cfg, s, &penalties))?;
    let (rows, best) = path_table(&grid, &sweeps);
    Ok((sweeps, rows, best))
}
