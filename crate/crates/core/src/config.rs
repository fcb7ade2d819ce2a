//! Metric configuration and its stable fingerprint.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gaussian::CovarianceMode;
use crate::sampler::PixelObservationSpec;

pub const DEFAULT_PCA_DIM: usize = 64;
pub const DEFAULT_VAR_FLOOR: f64 = 1e-6;

/// PCA dimensions swept by the ablation grid.
pub const ABLATION_PCA_DIMS: [usize; 4] = [16, 32, 64, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Gbc,
    Leep,
    Logme,
    Hscore,
    Ids,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Gbc, Metric::Leep, Metric::Logme, Metric::Hscore, Metric::Ids];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Gbc => "gbc",
            Metric::Leep => "leep",
            Metric::Logme => "logme",
            Metric::Hscore => "hscore",
            Metric::Ids => "ids",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Argument(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Classification,
    Segmentation,
}

impl Task {
    pub fn default_covariance(self) -> CovarianceMode {
        match self {
            Task::Classification => CovarianceMode::Spherical,
            Task::Segmentation => CovarianceMode::Diagonal,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Segmentation => "segmentation",
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classification" => Ok(Task::Classification),
            "segmentation" => Ok(Task::Segmentation),
            _ => Err(Error::Argument(format!("unknown task {s:?}"))),
        }
    }
}

/// How the GBC pair sum is reported. `Unordered` sums each class pair once;
/// `Ordered` counts both `(i, j)` and `(j, i)` and is exactly twice as large.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSum {
    #[default]
    Unordered,
    Ordered,
}

impl PairSum {
    pub fn as_str(self) -> &'static str {
        match self {
            PairSum::Unordered => "unordered",
            PairSum::Ordered => "ordered",
        }
    }

    pub fn factor(self) -> f64 {
        match self {
            PairSum::Unordered => 1.0,
            PairSum::Ordered => 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricConfig {
    pub metric: Metric,
    pub task: Task,
    pub pca_dim: usize,
    pub covariance_mode: CovarianceMode,
    pub var_floor: f64,
    pub pair_sum: PairSum,
    pub sampler: Option<PixelObservationSpec>,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self::for_task(Metric::Gbc, Task::Classification)
    }
}

impl MetricConfig {
    pub fn for_task(metric: Metric, task: Task) -> Self {
        Self {
            metric,
            task,
            pca_dim: DEFAULT_PCA_DIM,
            covariance_mode: task.default_covariance(),
            var_floor: DEFAULT_VAR_FLOOR,
            pair_sum: PairSum::Unordered,
            sampler: (task == Task::Segmentation).then(PixelObservationSpec::default),
            seed: 0,
        }
    }

    pub fn with_metric(&self, metric: Metric) -> Self {
        Self { metric, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pca_dim == 0 {
            return Err(Error::Argument("pca_dim must be >= 1".into()));
        }
        if !(self.var_floor.is_finite() && self.var_floor > 0.0) {
            return Err(Error::Argument(format!(
                "var_floor must be a positive finite number, got {}",
                self.var_floor
            )));
        }
        if let Some(s) = &self.sampler {
            s.validate()?;
        }
        Ok(())
    }

    /// Canonical `key=value` rendering; identical configs give identical strings.
    pub fn canonical(&self) -> String {
        let mut s = format!(
            "metric={};task={};pca_dim={};covariance={};var_floor={:e};pair_sum={};seed={}",
            self.metric,
            self.task.as_str(),
            self.pca_dim,
            self.covariance_mode.as_str(),
            self.var_floor,
            self.pair_sum.as_str(),
            self.seed
        );
        if let Some(sp) = &self.sampler {
            s.push_str(&format!(
                ";pixels_per_image={};strategy={};sampler_seed={}",
                sp.pixels_per_image,
                sp.strategy.as_str(),
                sp.seed
            ));
        }
        s
    }

    /// First 16 hex digits of SHA-256 over [`Self::canonical`].
    pub fn fingerprint(&self) -> String {
        short_hash(&self.canonical())
    }
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn short_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Serialized form of [`MetricConfig`] where every field is optional and
/// the covariance default follows the task.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfigDoc {
    pub metric: Option<Metric>,
    pub task: Option<Task>,
    pub pca_dim: Option<usize>,
    pub covariance_mode: Option<CovarianceMode>,
    pub var_floor: Option<f64>,
    pub pair_sum: Option<PairSum>,
    pub sampler: Option<PixelObservationSpec>,
    pub seed: Option<u64>,
}

impl MetricConfigDoc {
    pub fn resolve(&self) -> Result<MetricConfig> {
        let task = self.task.unwrap_or_default();
        let mut cfg = MetricConfig::for_task(self.metric.unwrap_or(Metric::Gbc), task);
        if let Some(d) = self.pca_dim {
            cfg.pca_dim = d;
        }
        if let Some(m) = self.covariance_mode {
            cfg.covariance_mode = m;
        }
        if let Some(f) = self.var_floor {
            cfg.var_floor = f;
        }
        if let Some(p) = self.pair_sum {
            cfg.pair_sum = p;
        }
        if let Some(s) = &self.sampler {
            cfg.sampler = Some(s.clone());
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
