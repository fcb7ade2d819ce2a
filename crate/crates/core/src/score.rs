//! One entry point for every metric, driven by a [`MetricConfig`].
//!
//! All scores are oriented so that larger means more transferable. IDS is a
//! distance and is reported negated.

use serde::Serialize;

use crate::baselines;
use crate::config::{Metric, MetricConfig};
use crate::dataset::{EmbeddingSet, PredictionSet};
use crate::error::{Error, Result};
use crate::gbc;

/// Inputs a metric may need. Only GBC, H-score and LogME work from
/// `embeddings` alone.
#[derive(Debug, Clone, Copy)]
pub struct MetricInputs<'a> {
    pub embeddings: &'a EmbeddingSet,
    pub predictions: Option<&'a PredictionSet>,
    pub source: Option<&'a EmbeddingSet>,
}

impl<'a> MetricInputs<'a> {
    pub fn embeddings(embeddings: &'a EmbeddingSet) -> Self {
        Self {
            embeddings,
            predictions: None,
            source: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub samples: usize,
    pub classes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projected_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricScore {
    pub metric: Metric,
    pub value: f64,
    pub fingerprint: String,
    pub diagnostics: Diagnostics,
}

pub fn compute_metric(cfg: &MetricConfig, inputs: MetricInputs<'_>) -> Result<MetricScore> {
    cfg.validate()?;
    let set = inputs.embeddings;
    let mut diagnostics = Diagnostics {
        samples: set.len(),
        classes: set.present_classes().len(),
        ..Diagnostics::default()
    };
    let value = match cfg.metric {
        Metric::Gbc => {
            let s = gbc::gbc_pipeline(set, cfg)?;
            diagnostics.projected_dim = Some(gbc::effective_pca_dim(set, cfg));
            diagnostics.pair_count = Some(s.pair_overlaps.len());
            s.reported_value(cfg.pair_sum)
        }
        Metric::Leep => {
            let p = inputs
                .predictions
                .ok_or_else(|| Error::Argument("LEEP needs source-head predictions".into()))?;
            baselines::leep(p)?
        }
        Metric::Logme => {
            let l = baselines::logme(set)?;
            diagnostics.converged = Some(l.converged());
            diagnostics.iterations = l.classes.iter().map(|c| c.iterations).max();
            if !l.converged() {
                log::warn!("LogME did not converge for every class");
            }
            l.value
        }
        Metric::Hscore => baselines::hscore(set)?,
        Metric::Ids => {
            let src = inputs
                .source
                .ok_or_else(|| Error::Argument("IDS needs source embeddings".into()))?;
            baselines::ids(src, set)?
        }
    };
    Ok(MetricScore {
        metric: cfg.metric,
        value,
        fingerprint: cfg.fingerprint(),
        diagnostics,
    })
}
