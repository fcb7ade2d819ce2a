//! Principal-component projection of embeddings into a fixed low-dimensional space.
//!
//! The model is fit through the eigen-decomposition of the `D × D` sample
//! covariance of the centered features. Each component's sign is fixed so its
//! largest-magnitude entry (first one on exact ties) is positive, which makes
//! fitting a pure function of the input bytes.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dataset::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::{self, View, ROW_CHUNK};
use crate::tensor_io::{self, ByteReader};

pub const PCAM_MAGIC: &[u8; 4] = b"PCAM";
const DTYPE_F64: u8 = 1;

/// Eigenvalues below this fraction of the largest are reported as exactly zero.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `output_dim × input_dim`, row-major, orthonormal rows.
    components: Vec<f64>,
    explained_variance: Vec<f64>,
    input_dim: usize,
    output_dim: usize,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row `k` is the `k`-th principal direction.
    pub fn component(&self, k: usize) -> &[f64] {
        &self.components[k * self.input_dim..(k + 1) * self.input_dim]
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// Write the model as a PCAM file:
    /// `PCAM | version u32 | D u64 | d u64 | dtype u8 (1 = f64) | mean D | components d*D | variance d`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let count = self.mean.len() + self.components.len() + self.explained_variance.len();
        let mut buf = tensor_io::header(PCAM_MAGIC, count * 8);
        buf.extend_from_slice(&(self.input_dim as u64).to_le_bytes());
        buf.extend_from_slice(&(self.output_dim as u64).to_le_bytes());
        buf.push(DTYPE_F64);
        for v in self.mean.iter().chain(&self.components).chain(&self.explained_variance) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        tensor_io::write_file(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = tensor_io::read_file(path)?;
        let mut r = ByteReader::new(path, &bytes);
        r.expect_header(PCAM_MAGIC)?;
        let input_dim = r.usize()?;
        let output_dim = r.usize()?;
        let dtype = r.u8()?;
        if dtype != DTYPE_F64 {
            return Err(Error::format(path, format!("unsupported dtype {dtype}, PCAM stores f64 (1)")));
        }
        if input_dim == 0 || output_dim == 0 || output_dim > input_dim {
            return Err(Error::format(path, format!("invalid dimensions D={input_dim}, d={output_dim}")));
        }
        let body = r.payload_len(&[output_dim + 1, input_dim], 8)?;
        let len = body
            .checked_add(output_dim * 8)
            .ok_or_else(|| Error::corruption(path, "header dimensions overflow"))?;
        r.expect_remaining(len)?;
        Ok(Self {
            mean: r.f64s(input_dim)?,
            components: r.f64s(output_dim * input_dim)?,
            explained_variance: r.f64s(output_dim)?,
            input_dim,
            output_dim,
        })
    }
}

/// Fit the top-`d` principal components of `set`.
pub fn fit_pca(set: &EmbeddingSet, d: usize) -> Result<PcaModel> {
    let n = set.len();
    let dim = set.dim();
    if n < 2 {
        return Err(Error::Argument(format!("PCA needs at least 2 rows, got {n}")));
    }
    if d == 0 || d > n.min(dim) {
        return Err(Error::Argument(format!(
            "PCA dimension {d} must lie in [1, min(n={n}, D={dim})]"
        )));
    }

    let mean = linalg::column_means(set.features(), dim);
    let scatter = linalg::scatter_matrix(set.features(), dim, &mean);
    let inv = 1.0 / (n - 1) as f64;
    let cov = DMatrix::from_row_iterator(dim, dim, scatter.iter().map(|v| v * inv));
    let eig = cov.symmetric_eigen();

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut components = Vec::with_capacity(d * dim);
    let mut explained_variance = Vec::with_capacity(d);
    for &k in order.iter().take(d) {
        let lambda = eig.eigenvalues[k];
        explained_variance.push(if lambda <= top * RANK_TOLERANCE { 0.0 } else { lambda });
        let v = eig.eigenvectors.column(k);
        let pivot = (0..dim).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        components.extend(v.iter().map(|x| sign * x));
    }

    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        input_dim: dim,
        output_dim: d,
    })
}

/// Project every row onto the model's components; labels pass through unchanged.
pub fn project(model: &PcaModel, set: &EmbeddingSet) -> Result<EmbeddingSet> {
    if set.dim() != model.input_dim {
        return Err(Error::Argument(format!(
            "set has dimension {}, PCA model expects {}",
            set.dim(),
            model.input_dim
        )));
    }
    let dim = model.input_dim;
    let d = model.output_dim;
    let comps_t = View::row_major(&model.components, d, dim).t();
    let blocks: Vec<Vec<f32>> = set
        .features()
        .par_chunks(ROW_CHUNK * dim)
        .map(|chunk| {
            let mut centered = Vec::with_capacity(chunk.len());
            linalg::centered_block(chunk, &model.mean, &mut centered);
            let rows = centered.len() / dim;
            let mut out = vec![0.0f64; rows * d];
            linalg::gemm(1.0, View::row_major(&centered, rows, dim), comps_t, 0.0, &mut out, d);
            out.into_iter().map(|v| v as f32).collect()
        })
        .collect();
    EmbeddingSet::new(
        blocks.concat(),
        d,
        set.labels().to_vec(),
        set.class_count(),
        set.provenance(),
    )
}

/// `project(fit_pca(set, d), set)`.
pub fn fit_project(set: &EmbeddingSet, d: usize) -> Result<(PcaModel, EmbeddingSet)> {
    let model = fit_pca(set, d)?;
    let projected = project(&model, set)?;
    Ok((model, projected))
}
