//! Per-seed result records and their aggregates.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::write_bytes;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRecord {
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    pub metrics: BTreeMap<String, f64>,
    /// Wall-clock time; left out unless explicitly requested so that
    /// repeated runs write identical files.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub elapsed_ms: Option<f64>,
}

impl ResultsRecord {
    pub fn new(experiment: &str, seed: u64, config_hash: &str) -> Self {
        ResultsRecord {
            experiment: experiment.to_string(),
            seed,
            config_hash: config_hash.to_string(),
            metrics: BTreeMap::new(),
            elapsed_ms: None,
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.to_string(), value);
        self
    }
}

/// Mean and standard error of one metric across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Absent with a single seed.
    pub std_error: Option<f64>,
    pub count: usize,
}

pub fn aggregate(records: &[ResultsRecord]) -> BTreeMap<String, Aggregate> {
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        for (k, v) in &r.metrics {
            if v.is_finite() {
                values.entry(k.as_str()).or_default().push(*v);
            }
        }
    }
    values
        .into_iter()
        .map(|(k, v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let std_error = (n > 1).then(|| {
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            });
            (k.to_string(), Aggregate { mean, std_error, count: n })
        })
        .collect()
}

#[derive(Serialize)]
struct ResultsFile<'a> {
    records: &'a [ResultsRecord],
    aggregate: BTreeMap<String, Aggregate>,
}

/// Write records and their aggregate as pretty JSON.
pub fn write_results(path: impl AsRef<Path>, records: &[ResultsRecord]) -> Result<()> {
    let file = ResultsFile { records, aggregate: aggregate(records) };
    let text = serde_json::to_string_pretty(&file).expect("results serialize");
    write_bytes(path.as_ref(), text.as_bytes())
}
