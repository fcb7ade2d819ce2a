//! Turning file arguments into metric inputs.

use std::path::{Path, PathBuf};

use gbc_core::config::{short_hash, Metric, MetricConfig, Task};
use gbc_core::error::Error;
use gbc_core::sampler::{self, PixelObservationSpec, PixelSelection, SegmentationImage, SkippedImage};
use gbc_core::tensor_io;
use gbc_core::{EmbeddingSet, MetricInputs, PredictionSet};

use crate::CliError;

/// Files describing one target (or one manifest entry).
#[derive(Debug, Clone)]
pub struct TargetFiles {
    pub embeddings: PathBuf,
    pub labels: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub source_embeddings: Option<PathBuf>,
    pub image_pixels: Option<usize>,
}

pub struct Loaded {
    pub embeddings: EmbeddingSet,
    pub predictions: Option<PredictionSet>,
    pub source: Option<EmbeddingSet>,
    pub skipped: Vec<SkippedImage>,
}

impl Loaded {
    pub fn inputs(&self) -> MetricInputs<'_> {
        MetricInputs {
            embeddings: &self.embeddings,
            predictions: self.predictions.as_ref(),
            source: self.source.as_ref(),
        }
    }
}

/// Check that the files needed by `metric` are present.
pub fn check_required(files: &TargetFiles, metric: Metric, task: Task) -> Result<(), String> {
    if metric == Metric::Leep && files.predictions.is_none() {
        return Err("LEEP needs --predictions".into());
    }
    if metric == Metric::Ids && files.source_embeddings.is_none() {
        return Err("IDS needs --source-embeddings".into());
    }
    if task == Task::Segmentation && files.image_pixels.is_none() {
        return Err("segmentation needs the number of pixels per image".into());
    }
    Ok(())
}

/// Load everything the given metrics need. `cache` holds PSEL files for
/// segmentation targets.
pub fn load(files: &TargetFiles, cfg: &MetricConfig, metrics: &[Metric], cache: Option<&Path>) -> Result<Loaded, CliError> {
    let want_preds = metrics.contains(&Metric::Leep);
    let want_source = metrics.contains(&Metric::Ids);
    let source = match (&files.source_embeddings, want_source) {
        (Some(p), true) => Some(tensor_io::load_features(p)?),
        _ => None,
    };
    match cfg.task {
        Task::Classification => {
            let set = tensor_io::load_embeddings(&files.embeddings, files.labels.as_deref()).map_err(usage_if_argument)?;
            let predictions = match (&files.predictions, want_preds) {
                (Some(p), true) => Some(tensor_io::load_predictions(p, set.labels(), set.class_count())?),
                _ => None,
            };
            Ok(Loaded {
                embeddings: set,
                predictions,
                source,
                skipped: Vec::new(),
            })
        }
        Task::Segmentation => load_segmentation(files, cfg, want_preds, cache, source),
    }
}

fn usage_if_argument(e: Error) -> CliError {
    match e {
        Error::Argument(m) => CliError::Usage(m),
        other => other.into(),
    }
}

fn load_segmentation(
    files: &TargetFiles,
    cfg: &MetricConfig,
    want_preds: bool,
    cache: Option<&Path>,
    source: Option<EmbeddingSet>,
) -> Result<Loaded, CliError> {
    let image_pixels = files
        .image_pixels
        .ok_or_else(|| CliError::Usage("segmentation needs the number of pixels per image".into()))?;
    let labels_path = files
        .labels
        .as_deref()
        .ok_or_else(|| CliError::Usage("segmentation needs a per-pixel LBLS file".into()))?;
    let (_, dim, features) = tensor_io::read_embd(&files.embeddings)?;
    let labels = tensor_io::read_lbls(labels_path)?;
    let split = sampler::split_images(&features, dim, &labels, image_pixels)?;
    drop(features);
    let images: Vec<SegmentationImage<'_>> = split
        .iter()
        .enumerate()
        .map(|(i, (l, f))| SegmentationImage {
            image_id: i as u64,
            labels: l,
            features: f,
        })
        .collect();
    let spec = cfg.sampler.clone().unwrap_or_default();
    let (selections, skipped) = match cache {
        Some(dir) => sampler::select_with_cache(&images, &spec, &dir.join(selection_key(&spec)))?,
        None => sampler::select_all(&images, &spec)?,
    };
    for s in &skipped {
        eprintln!("warning: image {} skipped: {}", s.image_id, s.reason);
    }
    let class_count = labels.iter().copied().max().unwrap_or(-1).max(0) as usize + 1;
    let set = sampler::gather_observations(&images, &selections, class_count)?;
    let predictions = match (&files.predictions, want_preds) {
        (Some(p), true) => Some(gather_predictions(p, labels.len(), image_pixels, &selections, &set)?),
        _ => None,
    };
    Ok(Loaded {
        embeddings: set,
        predictions,
        source,
        skipped,
    })
}

/// Cache subdirectory for one sampler spec, so a changed spec never reuses
/// stale selections.
fn selection_key(spec: &PixelObservationSpec) -> String {
    let key = format!("{}-{}-{}", spec.pixels_per_image, spec.strategy.as_str(), spec.seed);
    format!("{}-{}", spec.strategy.as_str(), short_hash(&key))
}

fn gather_predictions(
    path: &Path,
    pixels: usize,
    image_pixels: usize,
    selections: &[PixelSelection],
    set: &EmbeddingSet,
) -> Result<PredictionSet, CliError> {
    let (n, z, probs) = tensor_io::read_pred(path)?;
    if n != pixels {
        return Err(CliError::Data(format!(
            "{} has {n} rows but the dump has {pixels} pixels",
            path.display()
        )));
    }
    let mut rows = Vec::with_capacity(set.len() * z);
    for sel in selections {
        for &i in &sel.indices {
            let g = sel.image_id as usize * image_pixels + i as usize;
            rows.extend_from_slice(&probs[g * z..(g + 1) * z]);
        }
    }
    Ok(PredictionSet::new(rows, z, set.labels().to_vec(), set.class_count())?)
}
