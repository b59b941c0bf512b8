//! Post-hoc spatial adapter for frozen predictors.
//!
//! A trained model `f` (regression, neural network, anything producing
//! predictions) leaves a residual field over sites and repetitions. The
//! adapter fits a small orthonormal basis to that field, penalised for
//! roughness (thin-plate bending energy) and for non-sparsity, using
//! mini-batch ADMM. The basis then gives
//!
//! * reconstructions of observed fields,
//! * a low-rank-plus-nugget covariance estimate,
//! * kriging predictions and intervals at unobserved sites.
//!
//! ```no_run
//! use spatial_adapter::prelude::*;
//!
//! let cfg = ExperimentConfig::default();
//! let (data, _truth) = load_data(&cfg, 1)?;
//! let pipe = prepare(&cfg, data, 1)?;
//! let model = pipe.fit(&adapter_config(&cfg, 1, 1e3, 1e3))?;
//! println!("basis rank {}", model.rank());
//! # Ok::<(), spatial_adapter::Error>(())
//! ```

pub mod adapter;
pub mod covariance;
pub mod dataio;
pub mod dataset;
mod error;
pub mod experiment;
pub mod firststage;
pub mod geometry;
pub mod linalg;
pub mod metrics;
pub mod predict;
pub mod synth;

pub use error::{Error, Result};

/// The types most programs need.
pub mod prelude {
    pub use crate::adapter::{fit_adapter, reconstruct, AdapterConfig, AdapterModel, BasisTarget, BceVariant, RankPolicy};
    pub use crate::covariance::{estimate_covariance, materialize_sigma, residual_gram, CovarianceEstimate};
    pub use crate::dataio::{read_config, read_matrix, write_matrix, ExperimentConfig};
    pub use crate::dataset::{Link, SpatialDataset, Split};
    pub use crate::experiment::{adapter_config, load_data, prepare, Pipeline};
    pub use crate::firststage::{fit_ols, FirstStage, TrendModel, TrendSpec};
    pub use crate::geometry::{build_roughness, extend_basis, LocationSet};
    pub use crate::predict::{gaussian_interval, logistic_interval, Kriger, ObservationSet, SolvePath};
    pub use crate::synth::{generate, DgpConfig};
    pub use crate::{Error, Result};
}
