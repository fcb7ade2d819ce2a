//! Per-class Gaussian models of (projected) embeddings.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    Full,
    Diagonal,
    Spherical,
}

impl CovarianceMode {
    pub const ALL: [CovarianceMode; 3] = [CovarianceMode::Full, CovarianceMode::Diagonal, CovarianceMode::Spherical];

    pub fn as_str(self) -> &'static str {
        match self {
            CovarianceMode::Full => "full",
            CovarianceMode::Diagonal => "diagonal",
            CovarianceMode::Spherical => "spherical",
        }
    }
}

impl fmt::Display for CovarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CovarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CovarianceMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Argument(format!("unknown covariance mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Symmetric positive-definite `d × d` matrix.
    Full(DMatrix<f64>),
    /// Per-dimension variances.
    Diagonal(Vec<f64>),
    /// One variance shared by all `dim` dimensions.
    Spherical { variance: f64, dim: usize },
}

impl Covariance {
    pub fn mode(&self) -> CovarianceMode {
        match self {
            Covariance::Full(_) => CovarianceMode::Full,
            Covariance::Diagonal(_) => CovarianceMode::Diagonal,
            Covariance::Spherical { .. } => CovarianceMode::Spherical,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Full(m) => m.nrows(),
            Covariance::Diagonal(v) => v.len(),
            Covariance::Spherical { dim, .. } => *dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassGaussian {
    pub class_id: u32,
    pub mean: Vec<f64>,
    pub covariance: Covariance,
    pub sample_count: usize,
}

impl ClassGaussian {
    /// Diagonal Gaussian from explicit parameters; variances must be positive.
    pub fn diagonal(class_id: u32, mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.len() != variances.len() || mean.is_empty() {
            return Err(Error::Argument("mean and variances must have the same nonzero length".into()));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Argument("variances must be positive and finite".into()));
        }
        Ok(Self {
            class_id,
            mean,
            covariance: Covariance::Diagonal(variances),
            sample_count: 0,
        })
    }

    pub fn spherical(class_id: u32, mean: Vec<f64>, variance: f64) -> Result<Self> {
        if mean.is_empty() || !(variance.is_finite() && variance > 0.0) {
            return Err(Error::Argument("spherical Gaussian needs a nonempty mean and positive variance".into()));
        }
        let dim = mean.len();
        Ok(Self {
            class_id,
            mean,
            covariance: Covariance::Spherical { variance, dim },
            sample_count: 0,
        })
    }

    pub fn full(class_id: u32, mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() || mean.is_empty() {
            return Err(Error::Argument("full covariance must be d × d with d = mean length".into()));
        }
        Ok(Self {
            class_id,
            mean,
            covariance: Covariance::Full(covariance),
            sample_count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Per-dimension variances (the diagonal for FULL).
    pub fn variances(&self) -> Vec<f64> {
        match &self.covariance {
            Covariance::Full(m) => m.diagonal().iter().copied().collect(),
            Covariance::Diagonal(v) => v.clone(),
            Covariance::Spherical { variance, dim } => vec![*variance; *dim],
        }
    }
}

fn lexicographic(a: &[f32], b: &[f32]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Fit one Gaussian per present class, in ascending class order.
///
/// Means are sample means; covariances use the unbiased `N_c - 1` denominator and
/// are reduced per `mode` before flooring: DIAGONAL keeps the diagonal,
/// SPHERICAL uses `trace / d`, FULL floors the eigenvalues. Singleton classes get
/// `var_floor` in every direction. Rows of a class are accumulated in a canonical
/// (lexicographic) order, so the result does not depend on row order.
pub fn fit_class_gaussians(set: &EmbeddingSet, mode: CovarianceMode, var_floor: f64) -> Result<Vec<ClassGaussian>> {
    if !(var_floor.is_finite() && var_floor > 0.0) {
        return Err(Error::Argument(format!("var_floor must be positive, got {var_floor}")));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); set.class_count()];
    for (i, &l) in set.labels().iter().enumerate() {
        members[l as usize].push(i);
    }
    members
        .into_par_iter()
        .enumerate()
        .filter(|(_, rows)| !rows.is_empty())
        .map(|(class, mut rows)| {
            rows.sort_by(|&a, &b| lexicographic(set.row(a), set.row(b)).then(a.cmp(&b)));
            fit_one(set, class as u32, &rows, mode, var_floor)
        })
        .collect()
}

fn fit_one(set: &EmbeddingSet, class_id: u32, rows: &[usize], mode: CovarianceMode, floor: f64) -> Result<ClassGaussian> {
    let d = set.dim();
    let n = rows.len();
    let mut mean = vec![0.0f64; d];
    for &r in rows {
        for (m, &v) in mean.iter_mut().zip(set.row(r)) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let denom = (n.max(2) - 1) as f64;
    let covariance = match mode {
        CovarianceMode::Diagonal | CovarianceMode::Spherical => {
            let mut var = vec![0.0f64; d];
            if n > 1 {
                for &r in rows {
                    for ((s, &v), m) in var.iter_mut().zip(set.row(r)).zip(&mean) {
                        let dev = f64::from(v) - m;
                        *s += dev * dev;
                    }
                }
                var.iter_mut().for_each(|s| *s /= denom);
            }
            if mode == CovarianceMode::Diagonal {
                Covariance::Diagonal(var.into_iter().map(|v| v.max(floor)).collect())
            } else {
                let variance = var.iter().sum::<f64>() / d as f64;
                Covariance::Spherical {
                    variance: variance.max(floor),
                    dim: d,
                }
            }
        }
        CovarianceMode::Full => {
            let mut cov = DMatrix::<f64>::zeros(d, d);
            if n > 1 {
                let mut dev = vec![0.0f64; d];
                for &r in rows {
                    for ((x, &v), m) in dev.iter_mut().zip(set.row(r)).zip(&mean) {
                        *x = f64::from(v) - m;
                    }
                    for j in 0..d {
                        for i in j..d {
                            cov[(i, j)] += dev[i] * dev[j];
                        }
                    }
                }
                for j in 0..d {
                    for i in j..d {
                        let v = cov[(i, j)] / denom;
                        cov[(i, j)] = v;
                        cov[(j, i)] = v;
                    }
                }
            }
            Covariance::Full(floor_eigenvalues(cov, floor))
        }
    };

    Ok(ClassGaussian {
        class_id,
        mean,
        covariance,
        sample_count: n,
    })
}

/// Raise every eigenvalue of a symmetric matrix to at least `floor`.
fn floor_eigenvalues(cov: DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let d = cov.nrows();
    let eig = cov.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return cov;
    }
    let lambda = eig.eigenvalues.map(|l| l.max(floor));
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&lambda) * q.transpose();
    for j in 0..d {
        for i in (j + 1)..d {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}
