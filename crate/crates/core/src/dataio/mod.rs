//! File formats: matrices, experiment configuration and result records.

pub mod config;
pub mod matrix;
pub mod results;

pub use config::{read_config, ExperimentConfig};
pub use matrix::{read_matrix, read_matrix_masked, write_matrix, MaskedMatrix, MatrixFormat};
pub use results::{aggregate, write_results, Aggregate, ResultsRecord};
