//! Frozen first-stage predictors, the learnable trend, and the residual field
//! the adapter works on.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Covariates, Link, SpatialDataset};
use crate::error::{Error, Result};

/// Labels are clamped to `[eps, 1 - eps]` before the logit.
pub const DEFAULT_CLAMP: f64 = 1e-7;

/// A first stage whose parameters are never updated by the adapter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FirstStage {
    /// Pooled linear regression; `weights[0]` is the intercept.
    Ols { weights: Vec<f64> },
    /// Predictions supplied with the dataset.
    External,
    Zero,
}

/// Result of the pooled regression, with conventional standard errors.
#[derive(Clone, Debug)]
pub struct OlsFit {
    pub stage: FirstStage,
    pub weights: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub noise_var: f64,
}

/// Pooled least squares of Y on `[1, x]` over the given time rows, skipping
/// masked entries.
pub fn fit_ols(ds: &SpatialDataset, rows: &[usize]) -> Result<OlsFit> {
    let p = ds.x.dim();
    let q = p + 1;
    let mut count = 0usize;
    let mut mean = vec![0.0; p];
    let mut ymean = 0.0;
    for &j in rows {
        for i in 0..ds.n_sites() {
            if ds.observed(j, i) {
                count += 1;
                for (m, v) in mean.iter_mut().zip(ds.x.at(j, i)) {
                    *m += v;
                }
                ymean += ds.y[(j, i)];
            }
        }
    }
    if count <= q {
        return Err(Error::invalid(format!("{count} observations cannot identify {q} coefficients")));
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    ymean /= count as f64;
    // Centered normal equations keep the intercept out of the conditioning.
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut c = vec![0.0; p];
    for &j in rows {
        for i in 0..ds.n_sites() {
            if !ds.observed(j, i) {
                continue;
            }
            for (k, v) in ds.x.at(j, i).iter().enumerate() {
                c[k] = v - mean[k];
            }
            let yc = ds.y[(j, i)] - ymean;
            for a in 0..p {
                xty[a] += c[a] * yc;
                for b in 0..=a {
                    xtx[(a, b)] += c[a] * c[b];
                }
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(b, a)] = xtx[(a, b)];
        }
    }
    // Scale to unit diagonal before judging rank.
    let d: Vec<f64> = (0..p).map(|a| xtx[(a, a)].sqrt()).collect();
    if d.iter().any(|&v| v == 0.0) {
        return Err(Error::Numerical("constant covariate: design is rank deficient".into()));
    }
    let scaled = DMatrix::from_fn(p, p, |a, b| xtx[(a, b)] / (d[a] * d[b]));
    let eig = scaled.clone().symmetric_eigen();
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    if lo <= 1e-12 * hi {
        return Err(Error::Numerical(format!("collinear design (condition {:.2e})", hi / lo.max(0.0))));
    }
    let inv_scaled = scaled
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular normal equations".into()))?;
    let inv = DMatrix::from_fn(p, p, |a, b| inv_scaled[(a, b)] / (d[a] * d[b]));
    let slopes = &inv * &xty;
    let intercept = ymean - slopes.iter().zip(&mean).map(|(s, m)| s * m).sum::<f64>();

    let mut weights = vec![intercept];
    weights.extend(slopes.iter());
    let mut sse = 0.0;
    for &j in rows {
        for i in 0..ds.n_sites() {
            if ds.observed(j, i) {
                sse += (ds.y[(j, i)] - linear(&weights, ds.x.at(j, i))).powi(2);
            }
        }
    }
    let noise_var = sse / (count - q) as f64;
    let mut std_errors = vec![0.0; q];
    // Intercept variance from the centered parameterisation.
    let mut var0 = 1.0 / count as f64;
    for a in 0..p {
        for b in 0..p {
            var0 += mean[a] * inv[(a, b)] * mean[b];
        }
    }
    std_errors[0] = (noise_var * var0).sqrt();
    for a in 0..p {
        std_errors[a + 1] = (noise_var * inv[(a, a)]).sqrt();
    }
    Ok(OlsFit { stage: FirstStage::Ols { weights: weights.clone() }, weights, std_errors, noise_var })
}

fn observed_count(ds: &SpatialDataset, rows: &[usize]) -> usize {
    rows.iter().map(|&j| (0..ds.n_sites()).filter(|&i| ds.observed(j, i)).count()).sum()
}

fn linear(weights: &[f64], x: &[f64]) -> f64 {
    weights[0] + weights[1..].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
}

impl FirstStage {
    /// First-stage outputs on the link scale for the given time rows.
    pub fn predict(&self, ds: &SpatialDataset, rows: &[usize]) -> Result<DMatrix<f64>> {
        let n = ds.n_sites();
        match self {
            FirstStage::Zero => Ok(DMatrix::zeros(rows.len(), n)),
            FirstStage::External => {
                let f = ds
                    .first_stage
                    .as_ref()
                    .ok_or_else(|| Error::invalid("external first stage requested but dataset has none"))?;
                Ok(f.select_rows(rows.iter()))
            }
            FirstStage::Ols { weights } => {
                if weights.len() != ds.x.dim() + 1 {
                    return Err(Error::dim(format!(
                        "{} regression weights for {} covariates",
                        weights.len(),
                        ds.x.dim()
                    )));
                }
                Ok(DMatrix::from_fn(rows.len(), n, |r, i| linear(weights, ds.x.at(rows[r], i))))
            }
        }
    }
}

/// Inverse link applied to observations: identity, or the clamped logit.
pub fn pseudo_response(y: f64, link: Link, clamp: f64) -> f64 {
    match link {
        Link::Identity => y,
        Link::Sigmoid => {
            let p = y.clamp(clamp, 1.0 - clamp);
            (p / (1.0 - p)).ln()
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Trend architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrendSpec {
    Zero,
    Linear,
    Mlp { hidden: Vec<usize> },
}

impl Default for TrendSpec {
    fn default() -> Self {
        TrendSpec::Zero
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Dense {
    out: usize,
    inp: usize,
    /// Row-major `out × inp` weights followed by `out` biases.
    params: Vec<f64>,
}

/// Covariate-driven trend. Inputs are standardised with statistics frozen at
/// construction so plain gradient steps behave on raw-scale covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendModel {
    spec: TrendSpec,
    shift: Vec<f64>,
    scale: Vec<f64>,
    layers: Vec<Dense>,
}

impl TrendModel {
    pub fn zero() -> Self {
        TrendModel { spec: TrendSpec::Zero, shift: vec![], scale: vec![], layers: vec![] }
    }

    /// Fresh trend with output identically zero. Normalisation uses the
    /// covariates on the given time rows.
    pub fn new(spec: &TrendSpec, x: &Covariates, rows: &[usize], seed: u64) -> Result<Self> {
        let p = x.dim();
        let (_, n, _) = x.shape();
        let mut shift = vec![0.0; p];
        let mut sq = vec![0.0; p];
        let count = (rows.len() * n).max(1) as f64;
        for &j in rows {
            for i in 0..n {
                for (c, v) in x.at(j, i).iter().enumerate() {
                    shift[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let scale: Vec<f64> = (0..p)
            .map(|c| {
                shift[c] /= count;
                let var = sq[c] / count - shift[c] * shift[c];
                if var > 1e-24 { var.sqrt() } else { 1.0 }
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths: Vec<usize> = match spec {
            TrendSpec::Zero => return Ok(Self::zero()),
            TrendSpec::Linear => vec![p, 1],
            TrendSpec::Mlp { hidden } => {
                if hidden.is_empty() || hidden.contains(&0) {
                    return Err(Error::Config("MLP hidden widths must be positive".into()));
                }
                std::iter::once(p).chain(hidden.iter().copied()).chain(std::iter::once(1)).collect()
            }
        };
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (inp, out) = (w[0], w[1]);
                let mut params = vec![0.0; out * inp + out];
                // Output layer starts at zero so the warm start is the first stage.
                if l < last {
                    let dist = Normal::new(0.0, (1.0 / inp as f64).sqrt()).unwrap();
                    params[..out * inp].iter_mut().for_each(|v| *v = dist.sample(&mut rng));
                }
                Dense { out, inp, params }
            })
            .collect();
        Ok(TrendModel { spec: spec.clone(), shift, scale, layers })
    }

    pub fn spec(&self) -> &TrendSpec {
        &self.spec
    }

    pub fn is_trainable(&self) -> bool {
        !self.layers.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.params.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params.iter().copied()).collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::dim(format!("{} parameters for a trend with {}", flat.len(), self.n_params())));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let len = l.params.len();
            l.params.copy_from_slice(&flat[at..at + len]);
            at += len;
        }
        Ok(())
    }

    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let input: Vec<f64> = x.iter().zip(&self.shift).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect();
        let mut acts = vec![input];
        let last = self.layers.len().saturating_sub(1);
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = acts.last().unwrap();
            let (w, b) = layer.params.split_at(layer.out * layer.inp);
            let next: Vec<f64> = (0..layer.out)
                .map(|o| {
                    let z = b[o] + w[o * layer.inp..(o + 1) * layer.inp].iter().zip(prev).map(|(a, c)| a * c).sum::<f64>();
                    if l < last { z.tanh() } else { z }
                })
                .collect();
            acts.push(next);
        }
        acts
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.layers.is_empty() {
            return 0.0;
        }
        self.activations(x).last().unwrap()[0]
    }

    /// `grad += coeff * ∂M(x)/∂θ`.
    pub fn accumulate_grad(&self, x: &[f64], coeff: f64, grad: &mut [f64]) {
        if self.layers.is_empty() || coeff == 0.0 {
            return;
        }
        let acts = self.activations(x);
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for l in &self.layers {
            offsets.push(at);
            at += l.params.len();
        }
        let mut delta = vec![coeff];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &acts[l];
            let off = offsets[l];
            for o in 0..layer.out {
                for k in 0..layer.inp {
                    grad[off + o * layer.inp + k] += delta[o] * input[k];
                }
                grad[off + layer.out * layer.inp + o] += delta[o];
            }
            if l > 0 {
                let w = &layer.params[..layer.out * layer.inp];
                delta = (0..layer.inp)
                    .map(|k| {
                        let back: f64 = (0..layer.out).map(|o| w[o * layer.inp + k] * delta[o]).sum();
                        back * (1.0 - input[k] * input[k])
                    })
                    .collect();
            }
        }
    }

    /// Trend outputs for the given time rows, `rows.len() × N`.
    pub fn predict(&self, x: &Covariates, rows: &[usize]) -> DMatrix<f64> {
        let (_, n, _) = x.shape();
        if self.layers.is_empty() {
            return DMatrix::zeros(rows.len(), n);
        }
        DMatrix::from_fn(rows.len(), n, |r, i| self.eval(x.at(rows[r], i)))
    }
}

/// Residual field `g†(Y) - F - M` on the given time rows.
pub fn compute_residual(
    ds: &SpatialDataset,
    first: &FirstStage,
    trend: &TrendModel,
    rows: &[usize],
    clamp: f64,
) -> Result<DMatrix<f64>> {
    if ds.link == Link::Sigmoid && rows.iter().any(|&j| ds.y.row(j).iter().any(|&v| v != 0.0 && v != 1.0)) {
        return Err(Error::invalid("sigmoid link requires 0/1 labels"));
    }
    let f = first.predict(ds, rows)?;
    let m = trend.predict(&ds.x, rows);
    Ok(DMatrix::from_fn(rows.len(), ds.n_sites(), |r, i| {
        pseudo_response(ds.y[(rows[r], i)], ds.link, clamp) - f[(r, i)] - m[(r, i)]
    }))
}

/// One gradient step on `(ρ/2) · mean (M - target)²` over the observed
/// entries of the given rows. `target` is `rows.len() × N`. Returns the loss
/// before the step.
pub fn trend_gradient_step(
    trend: &mut TrendModel,
    ds: &SpatialDataset,
    rows: &[usize],
    target: &DMatrix<f64>,
    rho: f64,
    lr: f64,
) -> Result<f64> {
    if target.shape() != (rows.len(), ds.n_sites()) {
        return Err(Error::dim("trend target shape does not match batch".to_string()));
    }
    if !trend.is_trainable() {
        return Ok(0.0);
    }
    let mut grad = vec![0.0; trend.n_params()];
    let mut loss = 0.0;
    let scale = rho / observed_count(ds, rows).max(1) as f64;
    for (r, &j) in rows.iter().enumerate() {
        for i in 0..ds.n_sites() {
            if !ds.observed(j, i) {
                continue;
            }
            let x = ds.x.at(j, i);
            let diff = trend.eval(x) - target[(r, i)];
            loss += 0.5 * scale * diff * diff;
            trend.accumulate_grad(x, scale * diff, &mut grad);
        }
    }
    let mut params = trend.params();
    params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= lr * g);
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("trend parameters became non-finite".into()));
    }
    trend.set_params(&params)?;
    Ok(loss)
}

/// Stage-one warm-up schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarmupConfig {
    pub lr: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        WarmupConfig { lr: 1e-2, momentum: 0.9, max_epochs: 50, patience: 5, batch_size: 64 }
    }
}

/// Task loss of `F + M` on the given rows: mean squared error for the
/// identity link, mean binary cross-entropy for the sigmoid link.
pub fn task_loss(ds: &SpatialDataset, first: &FirstStage, trend: &TrendModel, rows: &[usize]) -> Result<f64> {
    let f = first.predict(ds, rows)?;
    let m = trend.predict(&ds.x, rows);
    let mut total = 0.0;
    let mut count = 0usize;
    for (r, &j) in rows.iter().enumerate() {
        for i in 0..ds.n_sites() {
            if !ds.observed(j, i) {
                continue;
            }
            let eta = f[(r, i)] + m[(r, i)];
            let y = ds.y[(j, i)];
            total += match ds.link {
                Link::Identity => (y - eta).powi(2),
                Link::Sigmoid => softplus(eta) - y * eta,
            };
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() }
}

/// Fit the trend to the task loss with the first stage frozen, using
/// momentum SGD over shuffled time mini-batches and early stopping on the
/// validation rows. Returns the best trend seen.
pub fn warmup_trend(
    trend: &TrendModel,
    ds: &SpatialDataset,
    first: &FirstStage,
    cfg: &WarmupConfig,
    seed: u64,
) -> Result<TrendModel> {
    if !trend.is_trainable() || cfg.max_epochs == 0 {
        return Ok(trend.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = trend.clone();
    let mut velocity = vec![0.0; model.n_params()];
    let val_rows = if ds.split.val.is_empty() { &ds.split.train } else { &ds.split.val };
    let mut best = model.clone();
    let mut best_loss = task_loss(ds, first, &model, val_rows)?;
    let mut stale = 0;
    let mut order = ds.split.train.clone();
    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let f = first.predict(ds, batch)?;
            let mut grad = vec![0.0; model.n_params()];
            let scale = 1.0 / observed_count(ds, batch).max(1) as f64;
            for (r, &j) in batch.iter().enumerate() {
                for i in 0..ds.n_sites() {
                    if !ds.observed(j, i) {
                        continue;
                    }
                    let x = ds.x.at(j, i);
                    let eta = f[(r, i)] + model.eval(x);
                    let y = ds.y[(j, i)];
                    let dloss = match ds.link {
                        Link::Identity => eta - y,
                        Link::Sigmoid => sigmoid(eta) - y,
                    };
                    model.accumulate_grad(x, scale * dloss, &mut grad);
                }
            }
            let mut params = model.params();
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v - cfg.lr * g;
                *p += *v;
            }
            if params.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("trend warm-up diverged".into()));
            }
            model.set_params(&params)?;
        }
        let loss = task_loss(ds, first, &model, val_rows)?;
        if loss < best_loss {
            best_loss = loss;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(best)
}
