//! In-memory embedding and prediction sets.

use crate::error::{Error, Result};

/// An `n × dim` row-major matrix of f32 activations with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    features: Vec<f32>,
    dim: usize,
    labels: Vec<u32>,
    class_count: usize,
    provenance: String,
}

impl EmbeddingSet {
    /// Validating constructor. `class_count` must cover every label.
    pub fn new(
        features: Vec<f32>,
        dim: usize,
        labels: Vec<u32>,
        class_count: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("feature dimension must be >= 1".into()));
        }
        if labels.is_empty() {
            return Err(Error::Validation("embedding set must have >= 1 row".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Validation(format!(
                "feature buffer holds {} values, expected {} rows x {} columns",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite feature {} at row {}, column {}",
                features[pos],
                pos / dim,
                pos % dim
            )));
        }
        if let Some((row, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= class_count)
        {
            return Err(Error::Validation(format!(
                "label {label} at row {row} outside [0, {class_count})"
            )));
        }
        Ok(Self {
            features,
            dim,
            labels,
            class_count,
            provenance: provenance.into(),
        })
    }

    /// Build from signed labels as stored on disk; negative labels are rejected.
    pub fn from_signed_labels(
        features: Vec<f32>,
        dim: usize,
        labels: &[i32],
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let labels = labels
            .iter()
            .enumerate()
            .map(|(row, &l)| {
                u32::try_from(l)
                    .map_err(|_| Error::Validation(format!("negative label {l} at row {row}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let class_count = labels.iter().max().map_or(0, |&m| m as usize + 1);
        Self::new(features, dim, labels, class_count, provenance)
    }

    /// A feature matrix whose labels are irrelevant (e.g. the source side of IDS).
    pub fn unlabeled(features: Vec<f32>, dim: usize, provenance: impl Into<String>) -> Result<Self> {
        let n = features.len().checked_div(dim).unwrap_or(0);
        Self::new(features, dim, vec![0; n], 1, provenance)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    /// Row count per class index in `[0, class_count)`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_count];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Class indices with at least one row, ascending.
    pub fn present_classes(&self) -> Vec<u32> {
        self.class_counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(k, _)| k as u32)
            .collect()
    }

    pub(crate) fn into_parts(self) -> (Vec<f32>, usize, Vec<u32>, usize, String) {
        (self.features, self.dim, self.labels, self.class_count, self.provenance)
    }
}

/// Source-head probabilities over `source_classes` outputs, one row per target sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    probs: Vec<f32>,
    source_classes: usize,
    labels: Vec<u32>,
    class_count: usize,
}

/// Rows of a [`PredictionSet`] must sum to one within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

impl PredictionSet {
    pub fn new(probs: Vec<f32>, source_classes: usize, labels: Vec<u32>, class_count: usize) -> Result<Self> {
        if source_classes == 0 || labels.is_empty() {
            return Err(Error::Validation(
                "prediction set needs >= 1 row and >= 1 source class".into(),
            ));
        }
        if probs.len() != labels.len() * source_classes {
            return Err(Error::Validation(format!(
                "prediction buffer holds {} values, expected {} x {}",
                probs.len(),
                labels.len(),
                source_classes
            )));
        }
        for (row, p) in probs.chunks_exact(source_classes).enumerate() {
            if let Some(col) = p.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Validation(format!(
                    "probability {} at row {row}, column {col} is negative or non-finite",
                    p[col]
                )));
            }
            let sum: f64 = p.iter().map(|&v| f64::from(v)).sum();
            if sum == 0.0 {
                return Err(Error::Validation(format!("prediction row {row} is all zeros")));
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Validation(format!(
                    "prediction row {row} sums to {sum}, expected 1"
                )));
            }
        }
        if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= class_count) {
            return Err(Error::Validation(format!(
                "label {l} at row {row} outside [0, {class_count})"
            )));
        }
        Ok(Self {
            probs,
            source_classes,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn source_classes(&self) -> usize {
        self.source_classes
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.probs[i * self.source_classes..(i + 1) * self.source_classes]
    }

    /// Replace labels, e.g. with those of a companion [`EmbeddingSet`].
    pub fn with_labels(self, labels: Vec<u32>, class_count: usize) -> Result<Self> {
        if labels.len() != self.labels.len() {
            return Err(Error::Validation(format!(
                "prediction set has {} rows but {} labels were given",
                self.labels.len(),
                labels.len()
            )));
        }
        Self::new(self.probs, self.source_classes, labels, class_count)
    }
}
