//! Experiment configuration, read from JSON. Missing keys take defaults;
//! unknown keys are reported and ignored.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::{AdapterConfig, BceVariant};
use crate::covariance::ShrinkagePolicy;
use crate::error::{Error, Result};
use crate::experiment::{SweepSpec, TuneSpec};
use crate::firststage::{TrendSpec, WarmupConfig};
use crate::synth::DgpConfig;

/// Which frozen first stage to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FirstStageKind {
    #[default]
    Ols,
    External,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train: 0.7, val: 0.15 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoldoutConfig {
    /// Fraction of sites withheld from fitting.
    pub fraction: f64,
}

impl Default for HoldoutConfig {
    fn default() -> Self {
        HoldoutConfig { fraction: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub variants: Vec<BceVariant>,
    pub dgp: DgpConfig,
    /// Penalty weight used for both penalties.
    pub lambda: f64,
    pub max_iters: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            variants: vec![BceVariant::A, BceVariant::B, BceVariant::C],
            dgp: DgpConfig { n_sites: 128, n_times: 400, binary: true, ..DgpConfig::default() },
            lambda: 1.0,
            max_iters: 300,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// First seed; replication `r` uses `seed + r`.
    pub seed: u64,
    pub replications: usize,
    pub dgp: DgpConfig,
    /// Read a dataset directory instead of simulating.
    pub data_dir: Option<PathBuf>,
    pub split: SplitConfig,
    pub first_stage: FirstStageKind,
    pub trend: TrendSpec,
    pub warmup: WarmupConfig,
    pub adapter: AdapterConfig,
    pub shrinkage: ShrinkagePolicy,
    /// Penalty used for the unregularised comparison fit.
    pub unreg_lambda: f64,
    /// Penalty used for the regularised fit.
    pub reg_lambda: f64,
    /// Interval miscoverage level.
    pub alpha: f64,
    pub standardize: bool,
    pub sweep: SweepSpec,
    pub tune: TuneSpec,
    pub holdout: HoldoutConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            replications: 1,
            dgp: DgpConfig::default(),
            data_dir: None,
            split: SplitConfig::default(),
            first_stage: FirstStageKind::Ols,
            trend: TrendSpec::Zero,
            warmup: WarmupConfig::default(),
            adapter: AdapterConfig::default(),
            shrinkage: ShrinkagePolicy::default(),
            unreg_lambda: 1e-3,
            reg_lambda: 1e5,
            alpha: 0.05,
            standardize: false,
            sweep: SweepSpec::default(),
            tune: TuneSpec::default(),
            holdout: HoldoutConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.adapter.validate()?;
        self.dgp.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.unreg_lambda < 0.0 || self.reg_lambda < 0.0 {
            return Err(Error::Config("penalties must be non-negative".into()));
        }
        if !(self.holdout.fraction > 0.0 && self.holdout.fraction < 1.0) {
            return Err(Error::Config(format!("holdout fraction {} outside (0, 1)", self.holdout.fraction)));
        }
        if self.replications == 0 {
            return Err(Error::Config("need at least one replication".into()));
        }
        self.sweep.validate()?;
        self.tune.validate()?;
        Ok(())
    }

    /// Seeds `seed, seed + 1, ...` for all replications.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.replications as u64).map(|r| self.seed + r).collect()
    }

    /// Short SHA-256 digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parse configuration text, warning about keys that are not recognised.
pub fn parse_config(text: &str, context: &str) -> Result<ExperimentConfig> {
    let mut de = serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_ignored::deserialize(&mut de, |path| {
        log::warn!("{context}: ignoring unknown key `{path}`");
    })
    .map_err(|e| Error::Parse { context: context.to_string(), message: e.to_string() })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::RankPolicy;

    #[test]
    fn defaults_fill_missing_keys() {
        let cfg = parse_config("{}", "t").unwrap();
        assert_eq!(cfg.adapter.rho, 2.0);
        assert_eq!(cfg.adapter.rank, RankPolicy::Cumvar(0.9));
    }

    #[test]
    fn unknown_keys_are_tolerated() {
        let cfg = parse_config(r#"{"adapter": {"rho": 1.0, "colour": "red"}, "extra": 3}"#, "t").unwrap();
        assert_eq!(cfg.adapter.rho, 1.0);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(parse_config(r#"{"adapter": {"rho": -1.0}}"#, "t").is_err());
        assert!(parse_config(r#"{"adapter": {"lambda1": -0.5}}"#, "t").is_err());
        assert!(parse_config(r#"{"adapter": {"rho": "x"}}"#, "t").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.adapter.rho = 3.0;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.adapter.rank = RankPolicy::Fixed(2);
        let back = parse_config(&cfg.to_json(), "t").unwrap();
        assert_eq!(back, cfg);
    }
}
