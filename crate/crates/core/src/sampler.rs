//! Observation sampling: per-pixel observations for segmentation and class
//! subsets for classification.
//!
//! Pixels are drawn without replacement with the exponential-keys method: every
//! labeled pixel gets `key = -ln(u) / w` with `u` uniform in `(0, 1]` and
//! `w = 1 / freq(label)` under class-balanced sampling (`w = 1` for uniform), and
//! the `k` smallest keys win. Label frequencies are counted per image. Pixels
//! with a negative label are unlabeled and never drawn.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingSet;
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::tensor_io::{self, ByteReader};

pub const DEFAULT_PIXELS_PER_IMAGE: usize = 1000;
pub const PSEL_MAGIC: &[u8; 4] = b"PSEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingStrategy {
    #[default]
    ClassBalanced,
    Uniform,
}

impl SamplingStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingStrategy::ClassBalanced => "class-balanced",
            SamplingStrategy::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelObservationSpec {
    #[serde(default = "default_pixels")]
    pub pixels_per_image: usize,
    #[serde(default)]
    pub strategy: SamplingStrategy,
    #[serde(default)]
    pub seed: u64,
}

fn default_pixels() -> usize {
    DEFAULT_PIXELS_PER_IMAGE
}

impl Default for PixelObservationSpec {
    fn default() -> Self {
        Self {
            pixels_per_image: DEFAULT_PIXELS_PER_IMAGE,
            strategy: SamplingStrategy::ClassBalanced,
            seed: 0,
        }
    }
}

impl PixelObservationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.pixels_per_image == 0 {
            return Err(Error::Argument("pixels_per_image must be >= 1".into()));
        }
        Ok(())
    }
}

/// Dense ground truth for one image, row-major; negative values are unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<i32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<i32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Argument(format!(
                "label map of {width}x{height} needs {} entries, got {}",
                width * height,
                labels.len()
            )));
        }
        Ok(Self { width, height, labels })
    }

    pub fn pixel_count(&self) -> usize {
        self.labels.len()
    }
}

/// Random access to per-pixel feature vectors of one image.
pub trait PixelFeatures: Sync {
    fn dim(&self) -> usize;
    fn pixel_count(&self) -> usize;
    fn pixel(&self, index: usize) -> &[f32];
}

/// Row-major `pixels × dim` feature buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFeatureMap {
    dim: usize,
    data: Vec<f32>,
}

impl DenseFeatureMap {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Argument(format!("{} values do not form pixels of width {dim}", data.len())));
        }
        Ok(Self { dim, data })
    }
}

impl PixelFeatures for DenseFeatureMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn pixel_count(&self) -> usize {
        self.data.len() / self.dim
    }

    fn pixel(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }
}

/// One image of a segmentation target dataset.
pub struct SegmentationImage<'a> {
    pub image_id: u64,
    pub labels: &'a LabelMap,
    pub features: &'a dyn PixelFeatures,
}

/// Sampled pixel indices of one image, ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelSelection {
    pub image_id: u64,
    pub indices: Vec<u64>,
}

impl PixelSelection {
    /// `PSEL | version u32 | image_id u64 | k u64 | k u64 pixel indices`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = tensor_io::header(PSEL_MAGIC, self.indices.len() * 8 + 16);
        buf.extend_from_slice(&self.image_id.to_le_bytes());
        buf.extend_from_slice(&(self.indices.len() as u64).to_le_bytes());
        for i in &self.indices {
            buf.extend_from_slice(&i.to_le_bytes());
        }
        tensor_io::write_file(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = tensor_io::read_file(path)?;
        let mut r = ByteReader::new(path, &bytes);
        r.expect_header(PSEL_MAGIC)?;
        let image_id = r.u64()?;
        let k = r.usize()?;
        let len = r.payload_len(&[k], 8)?;
        r.expect_remaining(len)?;
        Ok(Self {
            image_id,
            indices: r.u64s(k)?,
        })
    }
}

/// An image that contributed no observations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedImage {
    pub image_id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelObservations {
    pub set: EmbeddingSet,
    pub selections: Vec<PixelSelection>,
    pub skipped: Vec<SkippedImage>,
}

/// Draw `min(pixels_per_image, labeled pixels)` pixels of one image.
/// Returns `None` when the image has no labeled pixel.
pub fn select_pixels(labels: &LabelMap, spec: &PixelObservationSpec, image_id: u64) -> Result<Option<PixelSelection>> {
    spec.validate()?;
    let labeled: Vec<(usize, i32)> = labels
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l >= 0)
        .map(|(i, &l)| (i, l))
        .collect();
    if labeled.is_empty() {
        return Ok(None);
    }
    let mut freq = std::collections::HashMap::new();
    for &(_, l) in &labeled {
        *freq.entry(l).or_insert(0usize) += 1;
    }
    let mut stream = rng::stream(spec.seed, tag::PIXELS, image_id);
    let mut keyed: Vec<(f64, usize)> = labeled
        .iter()
        .map(|&(i, l)| {
            let e = -rng::unit_open_below(&mut stream).ln();
            let key = match spec.strategy {
                SamplingStrategy::ClassBalanced => e * freq[&l] as f64,
                SamplingStrategy::Uniform => e,
            };
            (key, i)
        })
        .collect();
    let k = spec.pixels_per_image.min(keyed.len());
    let by_key = |a: &(f64, usize), b: &(f64, usize)| -> Ordering { a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)) };
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k, by_key);
        keyed.truncate(k);
    }
    let mut indices: Vec<u64> = keyed.iter().map(|&(_, i)| i as u64).collect();
    indices.sort_unstable();
    Ok(Some(PixelSelection { image_id, indices }))
}

/// Select pixels for every image. Images are independent and seeded by id.
pub fn select_all(images: &[SegmentationImage<'_>], spec: &PixelObservationSpec) -> Result<(Vec<PixelSelection>, Vec<SkippedImage>)> {
    let results: Vec<Result<Option<PixelSelection>>> = images
        .par_iter()
        .map(|img| select_pixels(img.labels, spec, img.image_id))
        .collect();
    let mut selections = Vec::new();
    let mut skipped = Vec::new();
    for (img, r) in images.iter().zip(results) {
        match r? {
            Some(sel) => selections.push(sel),
            None => {
                log::warn!("image {} has no labeled pixels; skipped", img.image_id);
                skipped.push(SkippedImage {
                    image_id: img.image_id,
                    reason: "no labeled pixels".into(),
                });
            }
        }
    }
    Ok((selections, skipped))
}

/// Build observations from existing selections, e.g. loaded from PSEL files.
pub fn gather_observations(images: &[SegmentationImage<'_>], selections: &[PixelSelection], class_count: usize) -> Result<EmbeddingSet> {
    if selections.is_empty() {
        return Err(Error::Validation("no pixel selections to gather".into()));
    }
    let dim = images
        .first()
        .map(|i| i.features.dim())
        .ok_or_else(|| Error::Argument("no images".into()))?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for sel in selections {
        let img = images
            .iter()
            .find(|i| i.image_id == sel.image_id)
            .ok_or_else(|| Error::Validation(format!("selection refers to unknown image {}", sel.image_id)))?;
        if img.features.dim() != dim {
            return Err(Error::Validation(format!(
                "image {} has feature width {}, expected {dim}",
                img.image_id,
                img.features.dim()
            )));
        }
        if img.features.pixel_count() != img.labels.pixel_count() {
            return Err(Error::Validation(format!(
                "image {} has {} feature pixels but {} label pixels",
                img.image_id,
                img.features.pixel_count(),
                img.labels.pixel_count()
            )));
        }
        for &p in &sel.indices {
            let p = p as usize;
            let label = *img.labels.labels.get(p).ok_or_else(|| {
                Error::Validation(format!("pixel {p} outside image {}", img.image_id))
            })?;
            let label = u32::try_from(label)
                .map_err(|_| Error::Validation(format!("pixel {p} of image {} is unlabeled", img.image_id)))?;
            features.extend_from_slice(img.features.pixel(p));
            labels.push(label);
        }
    }
    EmbeddingSet::new(features, dim, labels, class_count, "pixel-observations")
}

/// Select and gather in one step.
pub fn sample_pixels(images: &[SegmentationImage<'_>], spec: &PixelObservationSpec, class_count: usize) -> Result<PixelObservations> {
    let (selections, skipped) = select_all(images, spec)?;
    let set = gather_observations(images, &selections, class_count)?;
    Ok(PixelObservations {
        set,
        selections,
        skipped,
    })
}

/// Split a flat per-pixel dump into images of `image_pixels` consecutive rows.
/// Image ids are the image positions in the dump.
pub fn split_images(features: &[f32], dim: usize, labels: &[i32], image_pixels: usize) -> Result<Vec<(LabelMap, DenseFeatureMap)>> {
    if image_pixels == 0 || dim == 0 {
        return Err(Error::Argument("image_pixels and dim must be >= 1".into()));
    }
    if features.len() != labels.len() * dim {
        return Err(Error::Validation(format!(
            "{} feature rows but {} labels",
            features.len() / dim,
            labels.len()
        )));
    }
    if !labels.len().is_multiple_of(image_pixels) {
        return Err(Error::Validation(format!(
            "{} pixels do not split into images of {image_pixels}",
            labels.len()
        )));
    }
    labels
        .chunks(image_pixels)
        .zip(features.chunks(image_pixels * dim))
        .map(|(l, f)| Ok((LabelMap::new(image_pixels, 1, l.to_vec())?, DenseFeatureMap::new(dim, f.to_vec())?)))
        .collect()
}

fn cache_path(dir: &Path, image_id: u64) -> std::path::PathBuf {
    dir.join(format!("image-{image_id}.psel"))
}

/// Like [`select_all`], but reuse `image-<id>.psel` files from `dir` and write
/// the ones that are missing. The cache belongs to one sampler spec.
pub fn select_with_cache(
    images: &[SegmentationImage<'_>],
    spec: &PixelObservationSpec,
    dir: &Path,
) -> Result<(Vec<PixelSelection>, Vec<SkippedImage>)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut selections = Vec::new();
    let mut missing = Vec::new();
    for (i, img) in images.iter().enumerate() {
        let path = cache_path(dir, img.image_id);
        if path.exists() {
            let sel = PixelSelection::load(&path)?;
            if sel.image_id != img.image_id {
                return Err(Error::format(&path, format!("holds image {} instead of {}", sel.image_id, img.image_id)));
            }
            selections.push((i, sel));
        } else {
            missing.push(i);
        }
    }
    let subset: Vec<SegmentationImage<'_>> = missing
        .iter()
        .map(|&i| SegmentationImage {
            image_id: images[i].image_id,
            labels: images[i].labels,
            features: images[i].features,
        })
        .collect();
    let (fresh, skipped) = select_all(&subset, spec)?;
    for sel in fresh {
        sel.save(&cache_path(dir, sel.image_id))?;
        let pos = images.iter().position(|img| img.image_id == sel.image_id).unwrap_or(usize::MAX);
        selections.push((pos, sel));
    }
    selections.sort_by_key(|(i, _)| *i);
    Ok((selections.into_iter().map(|(_, s)| s).collect(), skipped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSubsetSpec {
    /// Fraction of classes kept, drawn uniformly from `[lo, hi]`.
    pub fraction_range: (f64, f64),
    pub seed: u64,
}

impl Default for ClassSubsetSpec {
    fn default() -> Self {
        Self {
            fraction_range: (0.02, 1.0),
            seed: 0,
        }
    }
}

/// `count` subsampled target datasets, each keeping every row of a random set
/// of classes and relabeling them densely in ascending original-class order.
pub fn sample_class_subsets(set: &EmbeddingSet, spec: &ClassSubsetSpec, count: usize) -> Result<Vec<EmbeddingSet>> {
    let (lo, hi) = spec.fraction_range;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::Argument(format!("fraction range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1")));
    }
    let present = set.present_classes();
    let c = present.len();
    if c < 2 {
        return Err(Error::Argument(format!("class subsetting needs >= 2 classes, found {c}")));
    }
    (0..count)
        .into_par_iter()
        .map(|index| {
            let mut stream = rng::stream(spec.seed, tag::SUBSETS, index as u64);
            let fraction = lo + (hi - lo) * rng::unit(&mut stream);
            let k = ((fraction * c as f64).round() as usize).clamp(2, c);
            let mut pool = present.clone();
            for i in 0..k {
                let j = i + rng::below(&mut stream, (c - i) as u64) as usize;
                pool.swap(i, j);
            }
            let mut chosen = pool[..k].to_vec();
            chosen.sort_unstable();
            let mut relabel = vec![u32::MAX; set.class_count()];
            for (new, &old) in chosen.iter().enumerate() {
                relabel[old as usize] = new as u32;
            }
            let mut features = Vec::new();
            let mut labels = Vec::new();
            for (row, &l) in set.rows().zip(set.labels()) {
                let new = relabel[l as usize];
                if new != u32::MAX {
                    features.extend_from_slice(row);
                    labels.push(new);
                }
            }
            EmbeddingSet::new(
                features,
                set.dim(),
                labels,
                k,
                format!("{}#subset{index}", set.provenance()),
            )
        })
        .collect()
}
