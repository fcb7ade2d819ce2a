//! Bhattacharyya overlap between class Gaussians and the GBC transferability score.
//!
//! For two Gaussians with means `μ1, μ2` and covariances `Σ1, Σ2`, with
//! `Σ = (Σ1 + Σ2) / 2`:
//!
//! ```text
//! D_B = 1/8 (μ1 - μ2)ᵀ Σ⁻¹ (μ1 - μ2) + 1/2 ln( |Σ| / sqrt(|Σ1| |Σ2|) )
//! BC  = exp(-D_B)
//! ```
//!
//! GBC is `-Σ_{i<j} BC(c_i, c_j)` over all unordered class pairs, so it lies in
//! `[-C(C-1)/2, 0)` and is higher for better-separated classes. All arithmetic is
//! done in f64 and log-determinants are accumulated as sums of logs.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::config::{MetricConfig, PairSum};
use crate::dataset::EmbeddingSet;
use crate::error::{Error, Result};
use crate::gaussian::{fit_class_gaussians, ClassGaussian, Covariance};
use crate::pca;

/// Distances this far below zero are rounding noise and clamp to zero.
const NEGATIVE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseOverlap {
    pub class_i: u32,
    pub class_j: u32,
    pub distance: f64,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbcScore {
    /// `-Σ coefficient` over `pair_overlaps`, summed in their order.
    pub value: f64,
    pub pair_overlaps: Vec<PairwiseOverlap>,
    pub fingerprint: Option<String>,
}

impl GbcScore {
    /// Value under the requested pair convention (`Ordered` doubles it).
    pub fn reported_value(&self, pair_sum: PairSum) -> f64 {
        self.value * pair_sum.factor()
    }
}

/// Closed-form Bhattacharyya distance between two Gaussians of the same mode and dimension.
pub fn bhattacharyya_distance(g1: &ClassGaussian, g2: &ClassGaussian) -> Result<f64> {
    let pair = || format!("classes ({}, {})", g1.class_id, g2.class_id);
    if g1.dim() != g2.dim() {
        return Err(Error::Argument(format!(
            "{}: dimensions {} and {} differ",
            pair(),
            g1.dim(),
            g2.dim()
        )));
    }
    if g1.covariance.mode() != g2.covariance.mode() {
        return Err(Error::Argument(format!(
            "{}: covariance modes {} and {} differ",
            pair(),
            g1.covariance.mode(),
            g2.covariance.mode()
        )));
    }

    let distance = match (&g1.covariance, &g2.covariance) {
        (Covariance::Diagonal(a), Covariance::Diagonal(b)) => {
            let mut maha = 0.0;
            let mut logdet = 0.0;
            for k in 0..a.len() {
                let avg = 0.5 * (a[k] + b[k]);
                let diff = g1.mean[k] - g2.mean[k];
                maha += diff * diff / avg;
                logdet += avg.ln() - 0.5 * (a[k].ln() + b[k].ln());
            }
            0.125 * maha + 0.5 * logdet
        }
        (
            Covariance::Spherical { variance: a, dim },
            Covariance::Spherical { variance: b, .. },
        ) => {
            let avg = 0.5 * (a + b);
            let maha: f64 = g1
                .mean
                .iter()
                .zip(&g2.mean)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / avg;
            let logdet = *dim as f64 * (avg.ln() - 0.5 * (a.ln() + b.ln()));
            0.125 * maha + 0.5 * logdet
        }
        (Covariance::Full(a), Covariance::Full(b)) => {
            let avg = (a + b) * 0.5;
            let chol = avg
                .cholesky()
                .ok_or_else(|| Error::Numerical(format!("{}: averaged covariance is not positive definite", pair())))?;
            let diff = DVector::from_iterator(g1.dim(), g1.mean.iter().zip(&g2.mean).map(|(x, y)| x - y));
            let z = chol
                .l_dirty()
                .solve_lower_triangular(&diff)
                .ok_or_else(|| Error::Numerical(format!("{}: triangular solve failed", pair())))?;
            let maha = z.norm_squared();
            let ld_avg = chol_logdet(chol.l_dirty());
            let ld_a = full_logdet(a).ok_or_else(|| Error::Numerical(format!("{}: covariance of class {} is not positive definite", pair(), g1.class_id)))?;
            let ld_b = full_logdet(b).ok_or_else(|| Error::Numerical(format!("{}: covariance of class {} is not positive definite", pair(), g2.class_id)))?;
            0.125 * maha + 0.5 * (ld_avg - 0.5 * (ld_a + ld_b))
        }
        _ => unreachable!("modes checked above"),
    };

    if !distance.is_finite() {
        return Err(Error::Numerical(format!("{}: non-finite Bhattacharyya distance", pair())));
    }
    if distance < -NEGATIVE_SLACK {
        return Err(Error::Numerical(format!("{}: negative Bhattacharyya distance {distance}", pair())));
    }
    Ok(distance.max(0.0))
}

fn chol_logdet(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

fn full_logdet(m: &DMatrix<f64>) -> Option<f64> {
    m.clone().cholesky().map(|c| chol_logdet(c.l_dirty()))
}

pub fn bhattacharyya_coefficient(g1: &ClassGaussian, g2: &ClassGaussian) -> Result<f64> {
    bhattacharyya_distance(g1, g2).map(|d| (-d).exp())
}

/// GBC over the given class Gaussians, pairs enumerated as `(i, j)`, `i < j`, in list order.
pub fn gbc_score(gaussians: &[ClassGaussian]) -> Result<GbcScore> {
    let c = gaussians.len();
    if c < 2 {
        return Err(Error::Argument(format!("GBC needs at least 2 classes, got {c}")));
    }
    let pairs: Vec<(usize, usize)> = (0..c).flat_map(|i| ((i + 1)..c).map(move |j| (i, j))).collect();
    let pair_overlaps = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (gi, gj) = (&gaussians[i], &gaussians[j]);
            let distance = bhattacharyya_distance(gi, gj)?;
            Ok(PairwiseOverlap {
                class_i: gi.class_id,
                class_j: gj.class_id,
                distance,
                coefficient: (-distance).exp(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let value = -pair_overlaps.iter().fold(0.0, |acc, p| acc + p.coefficient);
    Ok(GbcScore {
        value,
        pair_overlaps,
        fingerprint: None,
    })
}

/// Projection width actually used: `cfg.pca_dim`, capped by the input
/// dimension and the row count.
pub fn effective_pca_dim(set: &EmbeddingSet, cfg: &MetricConfig) -> usize {
    cfg.pca_dim.min(set.dim()).min(set.len())
}

/// PCA to [`effective_pca_dim`], per-class Gaussians, then [`gbc_score`].
pub fn gbc_pipeline(set: &EmbeddingSet, cfg: &MetricConfig) -> Result<GbcScore> {
    cfg.validate()?;
    let d = effective_pca_dim(set, cfg);
    if d < cfg.pca_dim {
        log::info!("pca_dim {} capped to {d} by the input shape", cfg.pca_dim);
    }
    let (_, projected) = pca::fit_project(set, d)?;
    let gaussians = fit_class_gaussians(&projected, cfg.covariance_mode, cfg.var_floor)?;
    let mut score = gbc_score(&gaussians)?;
    score.fingerprint = Some(cfg.fingerprint());
    Ok(score)
}
