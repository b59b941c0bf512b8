//! Evaluation metrics: pointwise errors, classification scores, covariance
//! and semivariogram discrepancies, interval coverage and calibration.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LocationSet;

/// Entries `(row, column)` of a T×N field.
pub type Entries = [(usize, usize)];

/// Every column of the given rows.
pub fn entries_for_rows(rows: &[usize], n_cols: usize) -> Vec<(usize, usize)> {
    rows.iter().flat_map(|&j| (0..n_cols).map(move |i| (j, i))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
}

fn check_shapes(a: &DMatrix<f64>, b: &DMatrix<f64>, idx: &Entries) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("{:?} against {:?}", a.shape(), b.shape())));
    }
    if idx.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    if idx.iter().any(|&(j, i)| j >= a.nrows() || i >= a.ncols()) {
        return Err(Error::invalid("evaluation index out of range"));
    }
    Ok(())
}

pub fn pointwise(y: &DMatrix<f64>, pred: &DMatrix<f64>, idx: &Entries) -> Result<PointwiseMetrics> {
    check_shapes(y, pred, idx)?;
    let count = idx.len() as f64;
    let mean = idx.iter().map(|&e| y[e]).sum::<f64>() / count;
    let (mut sse, mut sae, mut sst) = (0.0, 0.0, 0.0);
    for &e in idx {
        let d = y[e] - pred[e];
        sse += d * d;
        sae += d.abs();
        sst += (y[e] - mean).powi(2);
    }
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else if sse == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    Ok(PointwiseMetrics { rmse: (sse / count).sqrt(), mae: sae / count, r2 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub f1: f64,
    /// Undefined when only one class is present.
    pub auc: Option<f64>,
}

/// Accuracy and F1 at `threshold`; AUC from the rank-sum statistic with
/// average ranks for ties.
pub fn classification(y: &DMatrix<f64>, prob: &DMatrix<f64>, idx: &Entries, threshold: f64) -> Result<ClassificationMetrics> {
    check_shapes(y, prob, idx)?;
    if idx.iter().any(|&e| y[e] != 0.0 && y[e] != 1.0) {
        return Err(Error::invalid("labels must be 0/1"));
    }
    if idx.iter().any(|&e| !(0.0..=1.0).contains(&prob[e])) {
        return Err(Error::invalid("probabilities must lie in [0, 1]"));
    }
    let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for &e in idx {
        let pos = prob[e] >= threshold;
        let label = y[e] == 1.0;
        correct += (pos == label) as usize;
        match (pos, label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    let f1 = if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 };
    let scores: Vec<(f64, bool)> = idx.iter().map(|&e| (prob[e], y[e] == 1.0)).collect();
    Ok(ClassificationMetrics { accuracy: correct as f64 / idx.len() as f64, f1, auc: auc(&scores) })
}

fn auc(scores: &[(f64, bool)]) -> Option<f64> {
    let n_pos = scores.iter().filter(|s| s.1).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]].0 == scores[order[start]].0 {
            end += 1;
        }
        let avg = (start + end) as f64 / 2.0 + 1.0;
        rank_sum += order[start..=end].iter().filter(|&&k| scores[k].1).count() as f64 * avg;
        start = end + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Repetition-centered sample covariance of a T×N block, `1/(T-1)`.
pub fn sample_covariance(block: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if block.nrows() < 2 {
        return Err(Error::invalid("need at least two repetitions for a covariance"));
    }
    let c = crate::linalg::center_columns(block);
    Ok(crate::linalg::mul_tn(&c, &c) / (block.nrows() - 1) as f64)
}

/// `‖Σ_pred - Σ_ref‖_F / ‖Σ_ref‖_F`.
pub fn cov_frob(pred: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<f64> {
    if pred.shape() != reference.shape() {
        return Err(Error::dim(format!("{:?} against {:?}", pred.shape(), reference.shape())));
    }
    let denom = reference.norm();
    if denom == 0.0 {
        return Err(Error::invalid("reference covariance is zero"));
    }
    Ok((pred - reference).norm() / denom)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemivariogramConfig {
    pub bins: usize,
}

impl Default for SemivariogramConfig {
    fn default() -> Self {
        SemivariogramConfig { bins: 15 }
    }
}

/// One bin of an empirical semivariogram.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    /// Mean separation of the pairs in the bin.
    pub lag: f64,
    pub gamma: f64,
    pub pairs: usize,
}

/// Matheron estimator averaged over repetitions (rows of `field`), with
/// bins holding equal numbers of site pairs.
pub fn semivariogram(field: &DMatrix<f64>, locs: &LocationSet, cfg: &SemivariogramConfig) -> Result<Vec<VariogramBin>> {
    let n = locs.len();
    if field.ncols() != n {
        return Err(Error::dim(format!("field has {} columns for {n} sites", field.ncols())));
    }
    if cfg.bins == 0 {
        return Err(Error::Config("semivariogram needs at least one bin".into()));
    }
    if field.nrows() == 0 {
        return Err(Error::invalid("field has no repetitions"));
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for k in (i + 1)..n {
            pairs.push((locs.distance(i, k), i, k));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let bins = cfg.bins.min(pairs.len());
    if bins < cfg.bins {
        log::warn!("only {} site pairs; using {bins} bins", pairs.len());
    }
    let reps = field.nrows() as f64;
    let mut out = Vec::with_capacity(bins);
    for b in 0..bins {
        let lo = b * pairs.len() / bins;
        let hi = (b + 1) * pairs.len() / bins;
        let chunk = &pairs[lo..hi];
        if chunk.is_empty() {
            continue;
        }
        let lag = chunk.iter().map(|p| p.0).sum::<f64>() / chunk.len() as f64;
        let mut total = 0.0;
        for row in field.row_iter() {
            total += chunk.iter().map(|&(_, i, k)| (row[i] - row[k]).powi(2)).sum::<f64>() / (2.0 * chunk.len() as f64);
        }
        out.push(VariogramBin { lag, gamma: total / reps, pairs: chunk.len() });
    }
    Ok(out)
}

/// Root mean squared relative discrepancy between two semivariograms on the
/// same bins.
pub fn sv_score(pred: &[VariogramBin], observed: &[VariogramBin], delta: f64) -> Result<f64> {
    if pred.len() != observed.len() || pred.is_empty() {
        return Err(Error::dim(format!("semivariograms have {} and {} bins", pred.len(), observed.len())));
    }
    let sum: f64 = pred.iter().zip(observed).map(|(p, o)| ((p.gamma - o.gamma) / (o.gamma + delta)).powi(2)).sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// Empirical coverage and mean width of intervals over the given entries.
pub fn coverage(y: &DMatrix<f64>, lo: &DMatrix<f64>, hi: &DMatrix<f64>, idx: &Entries) -> Result<(f64, f64)> {
    check_shapes(y, lo, idx)?;
    check_shapes(y, hi, idx)?;
    if idx.iter().any(|&e| lo[e] > hi[e]) {
        return Err(Error::invalid("interval with lower end above upper end"));
    }
    let hits = idx.iter().filter(|&&e| lo[e] <= y[e] && y[e] <= hi[e]).count();
    let width: f64 = idx.iter().map(|&e| hi[e] - lo[e]).sum();
    Ok((hits as f64 / idx.len() as f64, width / idx.len() as f64))
}

/// Coverage of per-site rates `target` by per-site intervals.
pub fn site_coverage(target: &[f64], lo: &[f64], hi: &[f64]) -> Result<f64> {
    if target.len() != lo.len() || target.len() != hi.len() || target.is_empty() {
        return Err(Error::dim("site coverage inputs differ in length".to_string()));
    }
    let hits = (0..target.len()).filter(|&i| lo[i] <= target[i] && target[i] <= hi[i]).count();
    Ok(hits as f64 / target.len() as f64)
}

/// Expected calibration error with equal-width probability bins.
pub fn ece(y: &DMatrix<f64>, prob: &DMatrix<f64>, idx: &Entries, bins: usize) -> Result<f64> {
    check_shapes(y, prob, idx)?;
    if bins == 0 {
        return Err(Error::Config("ECE needs at least one bin".into()));
    }
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut hits = vec![0.0; bins];
    for &e in idx {
        let p = prob[e];
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        let b = ((p * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf[b] += p;
        hits[b] += y[e];
    }
    let total = idx.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (count[b] as f64 / total) * ((hits[b] - conf[b]) / count[b] as f64).abs())
        .sum())
}

/// `|⟨φ̂, φ⟩|` for single vectors, `‖Φ̂ᵀΦ‖_F / √K` otherwise.
pub fn basis_alignment(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimate.nrows() != truth.nrows() {
        return Err(Error::dim(format!("bases have {} and {} rows", estimate.nrows(), truth.nrows())));
    }
    if estimate.norm() == 0.0 || truth.norm() == 0.0 {
        return Err(Error::invalid("zero basis"));
    }
    let k = truth.ncols().max(estimate.ncols()) as f64;
    Ok((estimate.transpose() * truth).norm() / k.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_examples() {
        let y = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let idx = entries_for_rows(&[0], 3);
        let m = pointwise(&y, &y, &idx).unwrap();
        assert_eq!((m.rmse, m.mae, m.r2), (0.0, 0.0, 1.0));
        let p = DMatrix::from_row_slice(1, 3, &[2.0, 2.0, 2.0]);
        let m = pointwise(&y, &p, &idx).unwrap();
        assert!((m.rmse - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(m.r2.abs() < 1e-15);
    }

    #[test]
    fn auc_matches_pair_enumeration() {
        let probs = [0.1, 0.4, 0.35, 0.8, 0.4, 0.9, 0.2];
        let labels = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let y = DMatrix::from_row_slice(1, 7, &labels);
        let p = DMatrix::from_row_slice(1, 7, &probs);
        let got = classification(&y, &p, &entries_for_rows(&[0], 7), 0.5).unwrap().auc.unwrap();
        let mut wins = 0.0;
        let mut total = 0.0;
        for a in 0..7 {
            for b in 0..7 {
                if labels[a] == 1.0 && labels[b] == 0.0 {
                    total += 1.0;
                    wins += if probs[a] > probs[b] { 1.0 } else if probs[a] == probs[b] { 0.5 } else { 0.0 };
                }
            }
        }
        assert!((got - wins / total).abs() < 1e-15);
    }

    #[test]
    fn auc_undefined_for_one_class() {
        let y = DMatrix::from_element(1, 3, 1.0);
        let p = DMatrix::from_row_slice(1, 3, &[0.2, 0.5, 0.9]);
        assert_eq!(classification(&y, &p, &entries_for_rows(&[0], 3), 0.5).unwrap().auc, None);
    }

    #[test]
    fn cov_frob_examples() {
        let s = DMatrix::identity(3, 3) * 2.0;
        assert_eq!(cov_frob(&s, &s).unwrap(), 0.0);
        assert!((cov_frob(&DMatrix::zeros(3, 3), &s).unwrap() - 1.0).abs() < 1e-15);
        assert!(cov_frob(&s, &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn variogram_of_linear_field() {
        let locs = LocationSet::equispaced_1d(6, 0.0, 5.0).unwrap();
        let field = DMatrix::from_fn(2, 6, |_, i| i as f64);
        let sv = semivariogram(&field, &locs, &SemivariogramConfig { bins: 3 }).unwrap();
        assert_eq!(sv.iter().map(|b| b.pairs).sum::<usize>(), 15);
        for b in &sv {
            // γ(h) = h²/2 holds pairwise for a linear field.
            assert!(b.gamma >= b.lag.powi(2) / 2.0 - 1e-12);
        }
        assert_eq!(sv_score(&sv, &sv, 1e-8).unwrap(), 0.0);
    }

    #[test]
    fn coverage_and_calibration() {
        let y = DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 2.0, 3.0]);
        let lo = DMatrix::from_row_slice(1, 4, &[-1.0, 1.5, 1.0, 2.0]);
        let hi = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        let (cp, w) = coverage(&y, &lo, &hi, &entries_for_rows(&[0], 4)).unwrap();
        assert_eq!(cp, 0.75);
        assert!((w - 1.625).abs() < 1e-15);
        let labels = DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 1.0, 1.0]);
        let p = DMatrix::from_element(1, 4, 0.75);
        assert!(ece(&labels, &p, &entries_for_rows(&[0], 4), 10).unwrap().abs() < 1e-15);
    }

    #[test]
    fn alignment_is_sign_invariant() {
        let a = DMatrix::from_column_slice(3, 1, &[0.6, 0.8, 0.0]);
        assert!((basis_alignment(&a, &(-&a)).unwrap() - 1.0).abs() < 1e-15);
        assert!(basis_alignment(&a, &DMatrix::zeros(3, 1)).is_err());
    }
}
