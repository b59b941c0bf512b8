//! In-memory spatio-temporal datasets and their on-disk directory layout.
//!
//! A dataset directory holds `Y.csv` (T×N responses), `X.csv` (covariates,
//! one row per time/site pair in time-major order), `locations.csv` (N×d),
//! `meta.json`, and optionally `mask.csv` and `first_stage.csv`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataio::matrix::{read_matrix, write_matrix, write_bytes};
use crate::error::{Error, Result};
use crate::geometry::LocationSet;

/// Output link of the frozen predictor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Identity,
    Sigmoid,
}

/// Covariates for every (time, site) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariates {
    t: usize,
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl Covariates {
    pub fn new(t: usize, n: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != t * n * p {
            return Err(Error::dim(format!("covariates: {} values for {t}x{n}x{p}", data.len())));
        }
        Ok(Covariates { t, n, p, data })
    }

    pub fn zeros(t: usize, n: usize, p: usize) -> Self {
        Covariates { t, n, p, data: vec![0.0; t * n * p] }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.t, self.n, self.p)
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn at(&self, j: usize, i: usize) -> &[f64] {
        let start = (j * self.n + i) * self.p;
        &self.data[start..start + self.p]
    }

    pub fn at_mut(&mut self, j: usize, i: usize) -> &mut [f64] {
        let start = (j * self.n + i) * self.p;
        &mut self.data[start..start + self.p]
    }

    /// Rows `(j, i)` flattened in time-major order as a (T·N)×p matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.t * self.n, self.p, &self.data)
    }

    pub fn from_matrix(t: usize, n: usize, m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != t * n {
            return Err(Error::dim(format!("covariate matrix has {} rows, expected {}", m.nrows(), t * n)));
        }
        let p = m.ncols();
        let mut data = Vec::with_capacity(t * n * p);
        for r in 0..m.nrows() {
            data.extend(m.row(r).iter());
        }
        Covariates::new(t, n, p, data)
    }

    pub fn select(&self, times: &[usize], sites: &[usize]) -> Covariates {
        let mut data = Vec::with_capacity(times.len() * sites.len() * self.p);
        for &j in times {
            for &i in sites {
                data.extend_from_slice(self.at(j, i));
            }
        }
        Covariates { t: times.len(), n: sites.len(), p: self.p, data }
    }
}

/// Time-index partition into train, validation and test blocks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Contiguous blocks in time order.
    pub fn contiguous(t: usize, train_frac: f64, val_frac: f64) -> Result<Self> {
        if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0) {
            return Err(Error::Config(format!("bad split fractions {train_frac}/{val_frac}")));
        }
        let n_train = ((t as f64) * train_frac).floor() as usize;
        let n_val = ((t as f64) * val_frac).floor() as usize;
        if n_train == 0 {
            return Err(Error::Config(format!("split leaves no training rows out of {t}")));
        }
        Ok(Split {
            train: (0..n_train).collect(),
            val: (n_train..n_train + n_val).collect(),
            test: (n_train + n_val..t).collect(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct SpatialDataset {
    /// Responses, T×N. Binary labels for the sigmoid link.
    pub y: DMatrix<f64>,
    pub x: Covariates,
    pub locations: LocationSet,
    pub link: Link,
    pub split: Split,
    /// 0/1 matrix of observed entries; `None` means fully observed.
    pub mask: Option<DMatrix<f64>>,
    /// Precomputed first-stage outputs on the link scale, if supplied.
    pub first_stage: Option<DMatrix<f64>>,
}

impl SpatialDataset {
    pub fn validate(&self) -> Result<()> {
        let (t, n) = self.y.shape();
        let (xt, xn, _) = self.x.shape();
        if (xt, xn) != (t, n) {
            return Err(Error::dim(format!("Y is {t}x{n} but covariates are {xt}x{xn}")));
        }
        if self.locations.len() != n {
            return Err(Error::dim(format!("Y has {n} columns but {} locations", self.locations.len())));
        }
        for m in [&self.mask, &self.first_stage].into_iter().flatten() {
            if m.shape() != (t, n) {
                return Err(Error::dim(format!("auxiliary matrix is {:?}, expected {t}x{n}", m.shape())));
            }
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite response"));
        }
        if self.link == Link::Sigmoid && self.y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("sigmoid link requires 0/1 labels"));
        }
        let all = self.split.train.iter().chain(&self.split.val).chain(&self.split.test);
        if let Some(&bad) = all.clone().find(|&&j| j >= t) {
            return Err(Error::invalid(format!("split index {bad} out of range for T={t}")));
        }
        Ok(())
    }

    pub fn n_times(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_sites(&self) -> usize {
        self.y.ncols()
    }

    /// Whether entry `(j, i)` is observed.
    pub fn observed(&self, j: usize, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[(j, i)] != 0.0)
    }

    /// Keep only the given sites (columns), preserving times and split.
    pub fn select_sites(&self, sites: &[usize]) -> Result<SpatialDataset> {
        let all_times: Vec<usize> = (0..self.n_times()).collect();
        Ok(SpatialDataset {
            y: self.y.select_columns(sites.iter()),
            x: self.x.select(&all_times, sites),
            locations: self.locations.subset(sites)?,
            link: self.link,
            split: self.split.clone(),
            mask: self.mask.as_ref().map(|m| m.select_columns(sites.iter())),
            first_stage: self.first_stage.as_ref().map(|m| m.select_columns(sites.iter())),
        })
    }

    /// Z-score responses with the training-block mean and standard deviation.
    /// Returns `(mean, sd)` so predictions can be mapped back.
    pub fn standardize_response(&mut self) -> Result<(f64, f64)> {
        if self.link != Link::Identity {
            return Err(Error::Config("standardize applies to continuous responses only".into()));
        }
        let rows = self.y.select_rows(self.split.train.iter());
        let count = rows.len() as f64;
        let mean = rows.sum() / count;
        let var = rows.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0).max(1.0);
        let sd = var.sqrt();
        if sd == 0.0 {
            return Err(Error::invalid("constant training response cannot be standardized"));
        }
        self.y.apply(|v| *v = (*v - mean) / sd);
        if let Some(f) = self.first_stage.as_mut() {
            f.apply(|v| *v = (*v - mean) / sd);
        }
        Ok((mean, sd))
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    link: Link,
    n_times: usize,
    n_sites: usize,
    n_covariates: usize,
    split: Split,
}

pub fn write_dataset(dir: impl AsRef<Path>, ds: &SpatialDataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix(dir.join("Y.csv"), &ds.y)?;
    write_matrix(dir.join("X.csv"), &ds.x.to_matrix())?;
    write_matrix(dir.join("locations.csv"), ds.locations.coords())?;
    if let Some(m) = &ds.mask {
        write_matrix(dir.join("mask.csv"), m)?;
    }
    if let Some(f) = &ds.first_stage {
        write_matrix(dir.join("first_stage.csv"), f)?;
    }
    let meta = Meta {
        link: ds.link,
        n_times: ds.n_times(),
        n_sites: ds.n_sites(),
        n_covariates: ds.x.dim(),
        split: ds.split.clone(),
    };
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_bytes(&dir.join("meta.json"), text.as_bytes())
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<SpatialDataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { context: meta_path.display().to_string(), message: e.to_string() })?;
    let y = read_matrix(dir.join("Y.csv"))?;
    let x = Covariates::from_matrix(meta.n_times, meta.n_sites, &read_matrix(dir.join("X.csv"))?)?;
    let locations = LocationSet::new(read_matrix(dir.join("locations.csv"))?)?;
    let optional = |name: &str| -> Result<Option<DMatrix<f64>>> {
        let p = dir.join(name);
        if p.exists() { read_matrix(p).map(Some) } else { Ok(None) }
    };
    let ds = SpatialDataset {
        y,
        x,
        locations,
        link: meta.link,
        split: meta.split,
        mask: optional("mask.csv")?,
        first_stage: optional("first_stage.csv")?,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contiguous_split_sizes() {
        let s = Split::contiguous(1024, 0.7, 0.15).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (716, 153, 155));
        assert_eq!(s.val[0], 716);
        assert!(Split::contiguous(10, 0.9, 0.2).is_err());
    }

    #[test]
    fn covariate_layout() {
        let data: Vec<f64> = (0..12).map(f64::from).collect();
        let x = Covariates::new(2, 3, 2, data).unwrap();
        assert_eq!(x.at(1, 0), &[6.0, 7.0]);
        let back = Covariates::from_matrix(2, 3, &x.to_matrix()).unwrap();
        assert_eq!(back, x);
        assert_eq!(x.select(&[1], &[2, 0]).at(0, 1), &[6.0, 7.0]);
    }
}
