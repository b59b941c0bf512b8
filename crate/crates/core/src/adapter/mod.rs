//! Second-stage adapter: a smooth, sparse orthonormal basis fitted to the
//! first-stage residual field by mini-batch ADMM.

mod basis;
mod fit;
mod zstep;

pub use basis::{basis_step, SparsityLoop};
pub use fit::{fit_adapter, reconstruct, AdapterModel, AdmmTrace, TraceRecord};
pub use zstep::{off_basis, surrogate_target, working_response, z_update_bernoulli, z_update_gaussian, BceVariant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How many basis functions to fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankPolicy {
    Fixed(usize),
    /// Smallest rank explaining this fraction of residual variance.
    Cumvar(f64),
}

impl Default for RankPolicy {
    fn default() -> Self {
        RankPolicy::Cumvar(0.9)
    }
}

/// Rows of the consensus matrix fed to the basis step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisTarget {
    /// The current mini-batch only.
    #[default]
    Batch,
    /// Every training row of the persisted consensus.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    /// Maximum number of sweeps over the training rows.
    pub max_iters: usize,
    pub min_iters: usize,
    pub tol_abs: f64,
    pub tol_rel: f64,
    /// Basis update cadence, in sweeps.
    pub basis_every: usize,
    /// No basis updates from this sweep on.
    pub freeze_after: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { max_iters: 3000, min_iters: 20, tol_abs: 1e-8, tol_rel: 1e-6, basis_every: 5, freeze_after: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisConfig {
    pub target: BasisTarget,
    pub step: Option<f64>,
    pub reweight_eps: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        let s = SparsityLoop::default();
        BasisConfig { target: BasisTarget::Batch, step: s.step, reweight_eps: s.eps, tol: s.tol, max_iter: s.max_iter }
    }
}

impl BasisConfig {
    pub fn sparsity(&self) -> SparsityLoop {
        SparsityLoop { step: self.step, eps: self.reweight_eps, tol: self.tol, max_iter: self.max_iter }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BernoulliConfig {
    pub variant: BceVariant,
    pub step: f64,
    pub inner: usize,
    pub clamp: f64,
    pub weight_eps: f64,
}

impl Default for BernoulliConfig {
    fn default() -> Self {
        BernoulliConfig { variant: BceVariant::A, step: 0.5, inner: 2, clamp: 1e-7, weight_eps: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub rank: RankPolicy,
    /// Smoothness penalty weight.
    pub lambda1: f64,
    /// Sparsity penalty weight.
    pub lambda2: f64,
    pub rho: f64,
    pub batch_size: usize,
    pub trend_lr: f64,
    pub schedule: Schedule,
    pub basis: BasisConfig,
    pub bernoulli: BernoulliConfig,
    /// Seeds the mini-batch order.
    pub seed: u64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            rank: RankPolicy::default(),
            lambda1: 0.0,
            lambda2: 0.0,
            rho: 2.0,
            batch_size: 64,
            trend_lr: 1e-2,
            schedule: Schedule::default(),
            basis: BasisConfig::default(),
            bernoulli: BernoulliConfig::default(),
            seed: 1,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad(format!("penalties must be non-negative, got {} and {}", self.lambda1, self.lambda2));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.trend_lr < 0.0 {
            return bad("trend learning rate must be non-negative".into());
        }
        match self.rank {
            RankPolicy::Fixed(0) => return bad("fixed rank must be at least 1".into()),
            RankPolicy::Cumvar(t) if !(t > 0.0 && t <= 1.0) => return bad(format!("variance fraction {t} outside (0, 1]")),
            _ => {}
        }
        let s = &self.schedule;
        if s.max_iters == 0 || s.basis_every == 0 {
            return bad("max_iters and basis_every must be positive".into());
        }
        if s.tol_abs < 0.0 || s.tol_rel < 0.0 {
            return bad("tolerances must be non-negative".into());
        }
        if self.bernoulli.step <= 0.0 || self.bernoulli.inner == 0 {
            return bad("Bernoulli step and inner iterations must be positive".into());
        }
        Ok(())
    }
}
