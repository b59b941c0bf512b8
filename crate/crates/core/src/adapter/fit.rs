use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::basis::basis_step;
use super::zstep::{surrogate_target, z_update_bernoulli, z_update_gaussian, BceVariant};
use super::{AdapterConfig, BasisTarget, RankPolicy};
use crate::covariance::{residual_gram, select_basis_rank};
use crate::dataio::matrix::{read_matrix, write_bytes, write_matrix};
use crate::dataset::{Link, SpatialDataset};
use crate::error::{Error, Result};
use crate::firststage::{compute_residual, pseudo_response, sigmoid, trend_gradient_step, FirstStage, TrendModel};
use crate::geometry::RoughnessMatrix;
use crate::linalg;

/// Diagnostics of one sweep over the training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// `‖Z - R‖_F` over all training rows.
    pub primal: f64,
    /// `ρ ‖Z - Z_prev‖_F` over all training rows.
    pub dual: f64,
    /// `‖Φ_new - Φ_old‖_F` when the basis was updated this sweep.
    pub basis_change: Option<f64>,
    pub tolerance: f64,
    /// `max(‖Z‖_F, ‖Y‖_F)`, the scale the relative tolerance refers to.
    pub scale: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdmmTrace {
    pub records: Vec<TraceRecord>,
    pub converged: bool,
    /// `‖Z P⊥‖_∞` of the final consensus field.
    #[serde(default)]
    pub off_basis_max: f64,
    /// `‖Z P⊥‖_F / ‖Z‖_F` of the final consensus field.
    #[serde(default)]
    pub off_basis_ratio: f64,
}

impl AdmmTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,primal,dual,basis_change,tolerance,scale\n");
        for r in &self.records {
            let change = r.basis_change.map_or(String::new(), |v| format!("{v:?}"));
            out.push_str(&format!("{},{:?},{:?},{},{:?},{:?}\n", r.iter, r.primal, r.dual, change, r.tolerance, r.scale));
        }
        out
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

/// A fitted adapter: frozen first stage, trend, basis and training scores.
#[derive(Clone, Debug)]
pub struct AdapterModel {
    pub first_stage: FirstStage,
    pub trend: TrendModel,
    pub link: Link,
    /// N×K orthonormal basis.
    pub phi: DMatrix<f64>,
    /// Training-row scores `Z Φ`, T_train×K.
    pub scores: DMatrix<f64>,
    pub train_rows: Vec<usize>,
    pub trace: AdmmTrace,
    pub config: AdapterConfig,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    first_stage: FirstStage,
    trend: TrendModel,
    link: Link,
    train_rows: Vec<usize>,
    converged: bool,
    config: AdapterConfig,
}

impl AdapterModel {
    pub fn rank(&self) -> usize {
        self.phi.ncols()
    }

    /// Residual field under this model's first stage and trend.
    pub fn residuals(&self, ds: &SpatialDataset, rows: &[usize]) -> Result<DMatrix<f64>> {
        compute_residual(ds, &self.first_stage, &self.trend, rows, self.config.bernoulli.clamp)
    }

    /// Writes `phi.csv`, `scores.csv`, `trace.csv` and `model.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_matrix(dir.join("phi.csv"), &self.phi)?;
        write_matrix(dir.join("scores.csv"), &self.scores)?;
        write_bytes(&dir.join("trace.csv"), self.trace.to_csv().as_bytes())?;
        let meta = ModelMeta {
            first_stage: self.first_stage.clone(),
            trend: self.trend.clone(),
            link: self.link,
            train_rows: self.train_rows.clone(),
            converged: self.trace.converged,
            config: self.config.clone(),
        };
        let text = serde_json::to_string_pretty(&meta).expect("model metadata serializes");
        write_bytes(&dir.join("model.json"), text.as_bytes())
    }

    /// Load a model written by [`AdapterModel::save`]. The trace is not
    /// restored beyond the convergence flag.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("model.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: ModelMeta = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { context: path.display().to_string(), message: e.to_string() })?;
        Ok(AdapterModel {
            first_stage: meta.first_stage,
            trend: meta.trend,
            link: meta.link,
            phi: read_matrix(dir.join("phi.csv"))?,
            scores: read_matrix(dir.join("scores.csv"))?,
            train_rows: meta.train_rows,
            trace: AdmmTrace { converged: meta.converged, ..AdmmTrace::default() },
            config: meta.config,
        })
    }
}

fn write_rows(dst: &mut DMatrix<f64>, rows: &[usize], src: &DMatrix<f64>) {
    for (r, &j) in rows.iter().enumerate() {
        dst.row_mut(j).copy_from(&src.row(r));
    }
}

/// Fit the adapter on the training rows of `ds`.
///
/// One iteration is a sweep over shuffled mini-batches of training rows.
/// Each batch runs the trend step (if the trend is trainable), the consensus
/// step and the dual step; the basis is refitted at the start of every
/// `basis_every`-th sweep until `freeze_after`.
pub fn fit_adapter(
    ds: &SpatialDataset,
    first: &FirstStage,
    trend: &TrendModel,
    roughness: &RoughnessMatrix,
    cfg: &AdapterConfig,
) -> Result<AdapterModel> {
    cfg.validate()?;
    ds.validate()?;
    let rows = ds.split.train.clone();
    let (t, n) = (rows.len(), ds.n_sites());
    if cfg.batch_size > t {
        return Err(Error::Config(format!("batch size {} exceeds {t} training rows", cfg.batch_size)));
    }
    if roughness.omega.nrows() != n {
        return Err(Error::dim(format!("penalty is {}x{0}, data has {n} sites", roughness.omega.nrows())));
    }
    let clamp = cfg.bernoulli.clamp;
    let bernoulli = ds.link == Link::Sigmoid;
    let observed = DMatrix::from_fn(t, n, |r, i| pseudo_response(ds.y[(rows[r], i)], ds.link, clamp));
    let labels = ds.y.select_rows(rows.iter());
    let base = &observed - first.predict(ds, &rows)?;
    let mut trend = trend.clone();
    let trend_active = trend.is_trainable() && cfg.trend_lr > 0.0;
    let mut r = &base - trend.predict(&ds.x, &rows);
    if let Some(m) = &ds.mask {
        // Unobserved entries carry no residual information.
        let m = m.select_rows(rows.iter());
        r.zip_apply(&m, |v, keep| if keep == 0.0 { *v = 0.0 });
    }

    let k = match cfg.rank {
        RankPolicy::Fixed(k) => k,
        RankPolicy::Cumvar(tau) => select_basis_rank(&residual_gram(&r)?, tau)?.0.max(1),
    };
    if k >= n {
        return Err(Error::Config(format!("rank {k} must be below the number of sites {n}")));
    }

    let sparsity = cfg.basis.sparsity();
    let initial = linalg::center_columns(&r);
    let (_, mut phi) = linalg::top_eigen(&linalg::mul_tn(&initial, &initial), k)?;
    linalg::normalize_signs(&mut phi);

    let mut z = r.clone();
    let mut u = DMatrix::<f64>::zeros(t, n);
    let y_norm = ds.y.select_rows(rows.iter()).norm();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..t).collect();
    let mut trace = AdmmTrace::default();
    let mut last_change = f64::INFINITY;
    let sched = &cfg.schedule;
    let variant = if bernoulli { cfg.bernoulli.variant } else { BceVariant::A };

    for iter in 0..sched.max_iters {
        let z_prev = z.clone();
        order.shuffle(&mut rng);
        let batches: Vec<Vec<usize>> = order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect();
        let mut basis_change = None;
        if iter % sched.basis_every == 0 && iter < sched.freeze_after {
            let (zt, yt) = match cfg.basis.target {
                BasisTarget::All => (z.clone(), labels.clone()),
                BasisTarget::Batch => (z.select_rows(batches[0].iter()), labels.select_rows(batches[0].iter())),
            };
            let c = surrogate_target(variant, &zt, bernoulli.then_some(&yt), cfg.bernoulli.weight_eps)?;
            let next = basis_step(&c, &roughness.omega, roughness.spectral_norm, cfg.lambda1, cfg.lambda2, k, None, &sparsity)?;
            let change = (&next - &phi).norm();
            basis_change = Some(change);
            last_change = change;
            phi = next;
        }
        for batch in &batches {
            if trend_active {
                let target = DMatrix::from_fn(batch.len(), n, |b, i| {
                    let j = batch[b];
                    base[(j, i)] - z[(j, i)] - u[(j, i)]
                });
                let global: Vec<usize> = batch.iter().map(|&b| rows[b]).collect();
                trend_gradient_step(&mut trend, ds, &global, &target, cfg.rho, cfg.trend_lr)?;
                let m = trend.predict(&ds.x, &global);
                let fresh = DMatrix::from_fn(batch.len(), n, |b, i| base[(batch[b], i)] - m[(b, i)]);
                write_rows(&mut r, batch, &fresh);
            }
            let rb = r.select_rows(batch.iter());
            let ub = u.select_rows(batch.iter());
            let res = &rb - &ub;
            let zb = if bernoulli {
                let yb = labels.select_rows(batch.iter());
                let current = z.select_rows(batch.iter());
                z_update_bernoulli(&current, &yb, &phi, &res, cfg.rho, cfg.bernoulli.step, cfg.bernoulli.inner)?
            } else {
                z_update_gaussian(&res, &phi, cfg.rho)?
            };
            let ub_next = ub + (&zb - &rb);
            write_rows(&mut z, batch, &zb);
            write_rows(&mut u, batch, &ub_next);
        }
        let primal = (&z - &r).norm();
        let dual = cfg.rho * (&z - &z_prev).norm();
        if !primal.is_finite() || !dual.is_finite() {
            return Err(Error::Diverged { iteration: iter, what: "non-finite residual".into() });
        }
        let scale = z.norm().max(y_norm);
        let tolerance = sched.tol_abs + sched.tol_rel * scale;
        trace.records.push(TraceRecord { iter, primal, dual, basis_change, tolerance, scale });
        if iter + 1 >= sched.min_iters && dual <= tolerance && last_change <= tolerance {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        log::warn!("adapter stopped at the iteration cap without meeting the tolerance");
    }
    let off = super::zstep::off_basis(&z, &phi);
    trace.off_basis_max = off.abs().max();
    trace.off_basis_ratio = if z.norm() > 0.0 { off.norm() / z.norm() } else { 0.0 };
    let scores = &z * &phi;
    Ok(AdapterModel {
        first_stage: first.clone(),
        trend,
        link: ds.link,
        phi,
        scores,
        train_rows: rows,
        trace,
        config: cfg.clone(),
    })
}

/// `g(F + M + P(g†(Y) - F - M))` on the given rows, natural scale.
pub fn reconstruct(model: &AdapterModel, ds: &SpatialDataset, rows: &[usize]) -> Result<DMatrix<f64>> {
    if model.phi.nrows() != ds.n_sites() {
        return Err(Error::dim(format!("model has {} sites, data {}", model.phi.nrows(), ds.n_sites())));
    }
    let r = model.residuals(ds, rows)?;
    let fitted = model.first_stage.predict(ds, rows)? + model.trend.predict(&ds.x, rows);
    let eta = fitted + (&r * &model.phi) * model.phi.transpose();
    Ok(match ds.link {
        Link::Identity => eta,
        Link::Sigmoid => eta.map(sigmoid),
    })
}
