use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{adapter_config, for_seeds, prepare};
use crate::adapter::{BceVariant, Schedule};
use crate::dataio::config::{ExperimentConfig, FirstStageKind};
use crate::dataio::results::ResultsRecord;
use crate::dataset::Split;
use crate::error::Result;
use crate::firststage::{sigmoid, TrendSpec};
use crate::linalg::orthonormality_error;
use crate::metrics::{classification, ece, entries_for_rows, site_coverage};
use crate::predict::{logistic_interval, Kriger, ObservationSet, SolvePath};
use crate::synth::{generate, DgpConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub variant: BceVariant,
    pub accuracy: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub ece: f64,
    /// Coverage of per-site label rates by the averaged probability intervals.
    pub site_coverage: f64,
    pub mpiw: f64,
    pub orthonormality_error: f64,
    pub off_basis_max: f64,
    pub off_basis_ratio: f64,
    pub iterations: usize,
    /// Every trace entry and metric is finite.
    pub finite: bool,
}

/// Fit one cross-entropy target variant on the thresholded benchmark.
///
/// The first stage is zero and a linear trend is warmed up on the
/// cross-entropy, so the adapter sees logit-scale residuals. Each test row is
/// kriged from all of its own sites.
pub fn run_ablation_seed(cfg: &ExperimentConfig, seed: u64, variant: BceVariant) -> Result<AblationRun> {
    let dgp = DgpConfig { binary: true, ..cfg.ablation.dgp.clone() };
    let split = Split::contiguous(dgp.n_times, cfg.split.train, cfg.split.val)?;
    let data = generate(&dgp, seed, split)?.dataset;
    let mut local = cfg.clone();
    local.first_stage = FirstStageKind::Zero;
    if local.trend == TrendSpec::Zero {
        local.trend = TrendSpec::Linear;
    }
    let pipe = prepare(&local, data, seed)?;
    let ds = &pipe.data;
    let mut acfg = adapter_config(&local, seed, cfg.ablation.lambda, cfg.ablation.lambda);
    acfg.bernoulli.variant = variant;
    acfg.schedule = Schedule { max_iters: cfg.ablation.max_iters, ..acfg.schedule };
    let model = pipe.fit(&acfg)?;
    let (est, _) = pipe.covariance(&model, local.shrinkage.resolve(acfg.lambda1))?;
    let kriger = Kriger::new(&model.phi, &est)?;

    let test = ds.split.test.clone();
    let n = ds.n_sites();
    let resid = model.residuals(ds, &test)?;
    let fitted = pipe.first.predict(ds, &test)? + model.trend.predict(&ds.x, &test);
    let mut prob = DMatrix::zeros(test.len(), n);
    let mut lo = prob.clone();
    let mut hi = prob.clone();
    for r in 0..test.len() {
        let obs = ObservationSet::new((0..n).collect(), DVector::from_iterator(n, resid.row(r).iter().copied()), n)?;
        let trend: Vec<f64> = fitted.row(r).iter().copied().collect();
        for (i, p) in kriger.predict(&obs, &model.phi, &trend, SolvePath::Auto)?.into_iter().enumerate() {
            prob[(r, i)] = sigmoid(p.mean);
            let (a, b) = logistic_interval(p.mean, p.var, cfg.alpha)?;
            lo[(r, i)] = a;
            hi[(r, i)] = b;
        }
    }
    let labels = ds.y.select_rows(test.iter());
    let idx = entries_for_rows(&(0..test.len()).collect::<Vec<_>>(), n);
    let cls = classification(&labels, &prob, &idx, 0.5)?;
    let calib = ece(&labels, &prob, &idx, 10)?;
    let rate: Vec<f64> = (0..n).map(|i| labels.column(i).mean()).collect();
    let lo_site: Vec<f64> = (0..n).map(|i| lo.column(i).mean()).collect();
    let hi_site: Vec<f64> = (0..n).map(|i| hi.column(i).mean()).collect();
    let site_cp = site_coverage(&rate, &lo_site, &hi_site)?;
    let mpiw = (&hi - &lo).mean();
    let ortho = orthonormality_error(&model.phi);
    let finite = model.trace.records.iter().all(|r| r.primal.is_finite() && r.dual.is_finite())
        && [cls.accuracy, cls.f1, calib, site_cp, mpiw, ortho, model.trace.off_basis_max, model.trace.off_basis_ratio].iter().all(|v| v.is_finite());
    Ok(AblationRun {
        seed,
        variant,
        accuracy: cls.accuracy,
        f1: cls.f1,
        auc: cls.auc,
        ece: calib,
        site_coverage: site_cp,
        mpiw,
        orthonormality_error: ortho,
        off_basis_max: model.trace.off_basis_max,
        off_basis_ratio: model.trace.off_basis_ratio,
        iterations: model.trace.records.len(),
        finite,
    })
}

/// All configured variants for every seed; records are grouped by variant.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<(Vec<AblationRun>, Vec<ResultsRecord>)> {
    let seeds = cfg.seeds();
    let jobs: Vec<(BceVariant, u64)> = cfg.ablation.variants.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let keys: Vec<u64> = (0..jobs.len() as u64).collect();
    let runs = for_seeds(&keys, |k| {
        let (v, s) = jobs[k as usize];
        run_ablation_seed(cfg, s, v)
    })?;
    let hash = cfg.hash();
    let records = runs
        .iter()
        .map(|r| {
            let mut rec = ResultsRecord::new(&format!("ablation_{:?}", r.variant), r.seed, &hash)
                .with("accuracy", r.accuracy)
                .with("f1", r.f1)
                .with("ece", r.ece)
                .with("site_coverage", r.site_coverage)
                .with("mpiw", r.mpiw)
                .with("off_basis_max", r.off_basis_max)
                .with("off_basis_ratio", r.off_basis_ratio);
            if let Some(a) = r.auc {
                rec = rec.with("auc", a);
            }
            rec
        })
        .collect();
    Ok((runs, records))
}
