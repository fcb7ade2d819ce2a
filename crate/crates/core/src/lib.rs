//! Transferability estimation from target-set embeddings.
//!
//! The central score is GBC: embeddings are reduced with PCA, each class is
//! modeled as a Gaussian, and the score is minus the sum of Bhattacharyya
//! coefficients over class pairs. Less overlap between classes gives a higher
//! (less negative) score. LEEP, LogME, H-score and IDS are provided as
//! baselines, together with correlation tooling to compare scores against
//! reference accuracies.

pub mod baselines;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gaussian;
pub mod gbc;
mod linalg;
pub mod manifest;
pub mod pca;
pub mod ranking;
pub mod rng;
pub mod sampler;
pub mod score;
pub mod synth;
pub mod tensor_io;

pub use config::{Metric, MetricConfig, PairSum, Task};
pub use dataset::{EmbeddingSet, PredictionSet};
pub use error::{Error, Result};
pub use gaussian::{ClassGaussian, CovarianceMode};
pub use gbc::{gbc_pipeline, gbc_score, GbcScore};
pub use score::{compute_metric, MetricInputs, MetricScore};

/// Toolkit version embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
