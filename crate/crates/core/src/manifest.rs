//! Scenario manifests: TOML documents that list the (source, target) pairs of one
//! fixed-source or fixed-target scenario.
//!
//! ```toml
//! scenario_id = "cifar10"          # optional, defaults to the file stem
//! scenario_kind = "fixed-target"   # or "fixed-source"
//!
//! [metric_config]                  # optional, every key optional
//! metric = "gbc"                   # gbc | leep | logme | hscore | ids
//! task = "classification"          # or "segmentation"
//! pca_dim = 64
//! covariance_mode = "spherical"    # full | diagonal | spherical
//! var_floor = 1e-6
//! pair_sum = "unordered"           # or "ordered"
//! seed = 0
//!
//! [[entries]]
//! pair_id = "resnet50"
//! embeddings = "resnet50.embd"     # relative to the manifest
//! labels = "resnet50.lbls"         # omitted for .csv embeddings
//! predictions = "resnet50.pred"    # optional, needed by LEEP
//! source_embeddings = "src.embd"   # optional, needed by IDS
//! reference_accuracy = 0.91        # optional, all-or-none
//! image_pixels = 4096              # segmentation only: pixels per image
//! ```
//!
//! Segmentation entries hold per-pixel rows, images stored back to back with
//! `image_pixels` rows each, and labels where negative values mark unlabeled
//! pixels.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::config::{MetricConfig, MetricConfigDoc, Task};
use crate::error::{Error, Result};
use crate::ranking::ScenarioKind;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub pair_id: String,
    pub embeddings: PathBuf,
    pub labels: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub source_embeddings: Option<PathBuf>,
    pub reference_accuracy: Option<f64>,
    pub image_pixels: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioManifest {
    pub scenario_id: String,
    pub scenario_kind: ScenarioKind,
    pub entries: Vec<ManifestEntry>,
    pub metric_config: MetricConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    scenario_id: Option<String>,
    scenario_kind: ScenarioKind,
    #[serde(default)]
    metric_config: MetricConfigDoc,
    entries: Vec<EntryDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryDoc {
    pair_id: String,
    embeddings: PathBuf,
    labels: Option<PathBuf>,
    predictions: Option<PathBuf>,
    source_embeddings: Option<PathBuf>,
    reference_accuracy: Option<f64>,
    image_pixels: Option<usize>,
}

impl ScenarioManifest {
    /// True when every entry carries a reference accuracy.
    pub fn has_accuracies(&self) -> bool {
        self.entries.iter().all(|e| e.reference_accuracy.is_some())
    }
}

pub fn load_manifest(path: &Path) -> Result<ScenarioManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let default_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    parse_manifest(&text, base, &default_id).map_err(|e| match e {
        Error::Format { reason, .. } => Error::format(path, reason),
        other => other,
    })
}

/// Parse manifest text, resolving relative paths against `base`.
pub fn parse_manifest(text: &str, base: &Path, default_id: &str) -> Result<ScenarioManifest> {
    let doc: ManifestDoc = toml::from_str(text).map_err(|e| Error::format(base, e.to_string()))?;
    if doc.entries.is_empty() {
        return Err(Error::Validation("manifest lists no entries".into()));
    }
    let metric_config = doc.metric_config.resolve()?;

    let mut seen = HashSet::new();
    for e in &doc.entries {
        if !seen.insert(e.pair_id.as_str()) {
            return Err(Error::Validation(format!("duplicate pair_id {:?}", e.pair_id)));
        }
    }
    let with_acc = doc.entries.iter().filter(|e| e.reference_accuracy.is_some()).count();
    if with_acc != 0 && with_acc != doc.entries.len() {
        let missing: Vec<&str> = doc
            .entries
            .iter()
            .filter(|e| e.reference_accuracy.is_none())
            .map(|e| e.pair_id.as_str())
            .collect();
        return Err(Error::Validation(format!(
            "reference_accuracy must be given for all entries or none; missing for {missing:?}"
        )));
    }

    let resolve = |p: &Path, pair: &str, what: &str| -> Result<PathBuf> {
        let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        if !full.is_file() {
            return Err(Error::Validation(format!(
                "entry {pair:?}: {what} file {} does not exist",
                full.display()
            )));
        }
        Ok(full)
    };

    let mut entries = Vec::with_capacity(doc.entries.len());
    for e in doc.entries {
        if let Some(a) = e.reference_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Validation(format!(
                    "entry {:?}: reference_accuracy {a} outside [0, 1]",
                    e.pair_id
                )));
            }
        }
        let embeddings = resolve(&e.embeddings, &e.pair_id, "embeddings")?;
        let is_csv = embeddings
            .extension()
            .is_some_and(|x| x.eq_ignore_ascii_case("csv"));
        if !is_csv && e.labels.is_none() {
            return Err(Error::Validation(format!(
                "entry {:?}: binary embeddings need a labels file",
                e.pair_id
            )));
        }
        if metric_config.task == Task::Segmentation && !e.image_pixels.is_some_and(|p| p > 0) {
            return Err(Error::Validation(format!(
                "entry {:?}: segmentation entries need image_pixels >= 1",
                e.pair_id
            )));
        }
        entries.push(ManifestEntry {
            labels: e.labels.as_deref().map(|p| resolve(p, &e.pair_id, "labels")).transpose()?,
            predictions: e
                .predictions
                .as_deref()
                .map(|p| resolve(p, &e.pair_id, "predictions"))
                .transpose()?,
            source_embeddings: e
                .source_embeddings
                .as_deref()
                .map(|p| resolve(p, &e.pair_id, "source_embeddings"))
                .transpose()?,
            embeddings,
            pair_id: e.pair_id,
            reference_accuracy: e.reference_accuracy,
            image_pixels: e.image_pixels,
        });
    }

    Ok(ScenarioManifest {
        scenario_id: doc.scenario_id.unwrap_or_else(|| default_id.to_string()),
        scenario_kind: doc.scenario_kind,
        entries,
        metric_config,
    })
}
