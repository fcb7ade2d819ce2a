//! Binary and CSV formats for embeddings, labels and source-head predictions.
//!
//! All binary formats are little-endian, row-major and begin with a 4-byte magic
//! followed by a `u32` version (currently 1):
//!
//! ```text
//! EMBD | version u32 | n u64 | D u64 | dtype u8 (0 = f32) | n*D f32
//! LBLS | version u32 | n u64 | n i32
//! PRED | version u32 | n u64 | Z u64 | n*Z f32
//! ```
//!
//! The payload length must match the header exactly; short or padded files are
//! reported as corruption. CSV input (`.csv` extension) holds one row per line,
//! feature values followed by a final `label=<int>` field. Lines that are empty
//! or start with `#` are skipped. CSV is read-only.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::dataset::{EmbeddingSet, PredictionSet};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const EMBD_MAGIC: &[u8; 4] = b"EMBD";
pub const LBLS_MAGIC: &[u8; 4] = b"LBLS";
pub const PRED_MAGIC: &[u8; 4] = b"PRED";
const DTYPE_F32: u8 = 0;

/// Little-endian cursor over a fully-read file, reporting errors against its path.
pub(crate) struct ByteReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self { path, bytes, pos: 0 }
    }

    /// Check magic and version.
    pub(crate) fn expect_header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.bytes.len() < 4 || &self.bytes[..4] != magic {
            let found = &self.bytes[..self.bytes.len().min(4)];
            return Err(Error::format(
                self.path,
                format!(
                    "expected magic {:?}, found {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(found)
                ),
            ));
        }
        self.pos = 4;
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(self.path, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::corruption(
                self.path,
                format!(
                    "truncated: needed {len} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            )
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::corruption(self.path, format!("size {v} does not fit in memory")))
    }

    /// Product of header dimensions times element width, checked for overflow.
    pub(crate) fn payload_len(&self, dims: &[usize], width: usize) -> Result<usize> {
        dims.iter()
            .try_fold(width, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::corruption(self.path, format!("header dimensions {dims:?} overflow")))
    }

    /// Require exactly `len` bytes to remain.
    pub(crate) fn expect_remaining(&self, len: usize) -> Result<()> {
        let remaining = self.bytes.len() - self.pos;
        if remaining != len {
            return Err(Error::corruption(
                self.path,
                format!("header declares {len} payload bytes, file holds {remaining}"),
            ));
        }
        Ok(())
    }

    pub(crate) fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let raw = self.take(count * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn i32s(&mut self, count: usize) -> Result<Vec<i32>> {
        let raw = self.take(count * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn u64s(&mut self, count: usize) -> Result<Vec<u64>> {
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn header(magic: &[u8; 4], capacity: usize) -> Vec<u8> {
    let mut buf = Vec::with_capacity(capacity + 32);
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf
}

/// Raw EMBD contents: `(rows, cols, row-major values)`.
pub fn read_embd(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = read_file(path)?;
    let mut r = ByteReader::new(path, &bytes);
    r.expect_header(EMBD_MAGIC)?;
    let n = r.usize()?;
    let dim = r.usize()?;
    let dtype = r.u8()?;
    if dtype != DTYPE_F32 {
        return Err(Error::format(path, format!("unsupported dtype {dtype}, only 0 (f32) is defined")));
    }
    let len = r.payload_len(&[n, dim], 4)?;
    r.expect_remaining(len)?;
    let values = r.f32s(n * dim)?;
    Ok((n, dim, values))
}

pub fn write_embd(path: &Path, dim: usize, values: &[f32]) -> Result<()> {
    if dim == 0 || !values.len().is_multiple_of(dim) {
        return Err(Error::Argument(format!(
            "{} values do not form rows of width {dim}",
            values.len()
        )));
    }
    let n = values.len() / dim;
    let mut buf = header(EMBD_MAGIC, values.len() * 4);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(dim as u64).to_le_bytes());
    buf.push(DTYPE_F32);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &buf)
}

pub fn read_lbls(path: &Path) -> Result<Vec<i32>> {
    let bytes = read_file(path)?;
    let mut r = ByteReader::new(path, &bytes);
    r.expect_header(LBLS_MAGIC)?;
    let n = r.usize()?;
    let len = r.payload_len(&[n], 4)?;
    r.expect_remaining(len)?;
    r.i32s(n)
}

pub fn write_lbls(path: &Path, labels: &[i32]) -> Result<()> {
    let mut buf = header(LBLS_MAGIC, labels.len() * 4);
    buf.extend_from_slice(&(labels.len() as u64).to_le_bytes());
    for l in labels {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    write_file(path, &buf)
}

/// Raw PRED contents: `(rows, source classes, row-major probabilities)`.
pub fn read_pred(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = read_file(path)?;
    let mut r = ByteReader::new(path, &bytes);
    r.expect_header(PRED_MAGIC)?;
    let n = r.usize()?;
    let z = r.usize()?;
    let len = r.payload_len(&[n, z], 4)?;
    r.expect_remaining(len)?;
    let values = r.f32s(n * z)?;
    Ok((n, z, values))
}

pub fn write_pred(path: &Path, source_classes: usize, probs: &[f32]) -> Result<()> {
    if source_classes == 0 || !probs.len().is_multiple_of(source_classes) {
        return Err(Error::Argument(format!(
            "{} values do not form rows of width {source_classes}",
            probs.len()
        )));
    }
    let n = probs.len() / source_classes;
    let mut buf = header(PRED_MAGIC, probs.len() * 4);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(source_classes as u64).to_le_bytes());
    for v in probs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &buf)
}

fn provenance_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Load an embedding set.
///
/// `.csv` files carry their labels inline and `labels` must be `None`.
/// Anything else is read as EMBD and requires a companion LBLS file.
pub fn load_embeddings(features: &Path, labels: Option<&Path>) -> Result<EmbeddingSet> {
    if is_csv(features) {
        if labels.is_some() {
            return Err(Error::Argument(
                "CSV embeddings carry inline labels; drop the separate labels file".into(),
            ));
        }
        return load_embeddings_csv(features);
    }
    let labels_path = labels.ok_or_else(|| {
        Error::Argument(format!(
            "{} is an EMBD file and needs a companion LBLS labels file",
            features.display()
        ))
    })?;
    let (n, dim, values) = read_embd(features)?;
    let labels = read_lbls(labels_path)?;
    if labels.len() != n {
        return Err(Error::Validation(format!(
            "{} has {n} rows but {} holds {} labels",
            features.display(),
            labels_path.display(),
            labels.len()
        )));
    }
    EmbeddingSet::from_signed_labels(values, dim, &labels, provenance_of(features))
}

/// Load features only, attaching placeholder labels.
pub fn load_features(path: &Path) -> Result<EmbeddingSet> {
    if is_csv(path) {
        let set = load_embeddings_csv(path)?;
        let (features, dim, ..) = set.into_parts();
        return EmbeddingSet::unlabeled(features, dim, provenance_of(path));
    }
    let (_, dim, values) = read_embd(path)?;
    EmbeddingSet::unlabeled(values, dim, provenance_of(path))
}

/// Persist features as EMBD and labels as LBLS.
pub fn save_embeddings(set: &EmbeddingSet, features: &Path, labels: &Path) -> Result<()> {
    write_embd(features, set.dim(), set.features())?;
    let signed: Vec<i32> = set
        .labels()
        .iter()
        .map(|&l| {
            i32::try_from(l).map_err(|_| Error::Argument(format!("label {l} exceeds the i32 range")))
        })
        .collect::<Result<_>>()?;
    write_lbls(labels, &signed)
}

pub fn load_embeddings_csv(path: &Path) -> Result<EmbeddingSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let last = fields.pop().unwrap_or_default();
        let label = last
            .strip_prefix("label=")
            .and_then(|v| v.parse::<i32>().ok())
            .ok_or_else(|| {
                Error::format(path, format!("line {}: last field must be label=<int>, got {last:?}", lineno + 1))
            })?;
        if fields.is_empty() {
            return Err(Error::format(path, format!("line {}: no feature values", lineno + 1)));
        }
        match dim {
            None => dim = Some(fields.len()),
            Some(d) if d != fields.len() => {
                return Err(Error::format(
                    path,
                    format!("line {}: {} features, earlier rows have {d}", lineno + 1, fields.len()),
                ))
            }
            Some(_) => {}
        }
        for f in fields {
            let v = f.parse::<f32>().map_err(|_| {
                Error::format(path, format!("line {}: {f:?} is not a number", lineno + 1))
            })?;
            features.push(v);
        }
        labels.push(label);
    }
    let dim = dim.ok_or_else(|| Error::format(path, "no data rows"))?;
    EmbeddingSet::from_signed_labels(features, dim, &labels, provenance_of(path))
}

/// Load a PRED file and attach the given target labels.
pub fn load_predictions(path: &Path, labels: &[u32], class_count: usize) -> Result<PredictionSet> {
    let (n, z, probs) = read_pred(path)?;
    if n != labels.len() {
        return Err(Error::Validation(format!(
            "{} has {n} rows but the embedding set has {}",
            path.display(),
            labels.len()
        )));
    }
    PredictionSet::new(probs, z, labels.to_vec(), class_count)
}
