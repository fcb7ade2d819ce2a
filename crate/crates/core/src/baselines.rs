//! Competing transferability metrics: LEEP, H-score, LogME and IDS.
//!
//! Every function returns a value where higher means "more transferable".

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dataset::{EmbeddingSet, PredictionSet};
use crate::error::{Error, Result};
use crate::linalg;

/// Log expected empirical prediction.
///
/// Builds the empirical joint `P(y, z) = 1/n Σ_{i: y_i = y} θ_i[z]` between target
/// labels and source-head outputs, conditions it on `z`, and averages
/// `log Σ_z P(y_i | z) θ_i[z]`. Source outputs with zero total mass are ignored.
pub fn leep(preds: &PredictionSet) -> Result<f64> {
    let n = preds.len();
    let z_count = preds.source_classes();
    let c = preds.class_count();
    let mut joint = vec![0.0f64; c * z_count];
    let mut present = vec![false; c];
    for i in 0..n {
        let y = preds.labels()[i] as usize;
        present[y] = true;
        for (acc, &p) in joint[y * z_count..(y + 1) * z_count].iter_mut().zip(preds.row(i)) {
            *acc += f64::from(p);
        }
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(Error::Validation(format!("target class {missing} has no samples")));
    }
    let mut marginal = vec![0.0f64; z_count];
    for y in 0..c {
        for z in 0..z_count {
            marginal[z] += joint[y * z_count + z];
        }
    }
    // P(y | z); the 1/n factors cancel
    let conditional: Vec<f64> = (0..c * z_count)
        .map(|k| {
            let m = marginal[k % z_count];
            if m > 0.0 {
                joint[k] / m
            } else {
                0.0
            }
        })
        .collect();

    let mut total = 0.0;
    for i in 0..n {
        let y = preds.labels()[i] as usize;
        let eep: f64 = preds
            .row(i)
            .iter()
            .zip(&conditional[y * z_count..(y + 1) * z_count])
            .map(|(&p, &q)| f64::from(p) * q)
            .sum();
        if eep <= 0.0 {
            return Err(Error::Numerical(format!("row {i} has zero expected empirical prediction")));
        }
        total += eep.ln();
    }
    Ok((total / n as f64).min(0.0))
}

/// Eigenvalues that are at most this fraction of the largest are dropped from
/// the H-score pseudo-inverse.
pub const HSCORE_PINV_CUTOFF: f64 = 1e-10;

/// H-score: `trace(pinv(cov(F)) · cov(E[F | Y]))`.
///
/// Both covariances use the `n - 1` denominator; the between-class term is the
/// covariance of each row replaced by its class mean.
pub fn hscore(set: &EmbeddingSet) -> Result<f64> {
    let n = set.len();
    let d = set.dim();
    if n < 2 {
        return Err(Error::Argument("H-score needs at least 2 rows".into()));
    }
    let mean = linalg::column_means(set.features(), d);
    let scatter = linalg::scatter_matrix(set.features(), d, &mean);
    let inv = 1.0 / (n - 1) as f64;
    let cov_f = DMatrix::from_row_iterator(d, d, scatter.iter().map(|v| v * inv));

    let counts = set.class_counts();
    let mut class_means = vec![0.0f64; set.class_count() * d];
    for (row, &l) in set.rows().zip(set.labels()) {
        for (m, &v) in class_means[l as usize * d..(l as usize + 1) * d].iter_mut().zip(row) {
            *m += f64::from(v);
        }
    }
    let mut cov_g = DMatrix::<f64>::zeros(d, d);
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let dev: Vec<f64> = class_means[c * d..(c + 1) * d]
            .iter()
            .zip(&mean)
            .map(|(s, m)| s / count as f64 - m)
            .collect();
        let w = count as f64 * inv;
        for j in 0..d {
            for i in 0..d {
                cov_g[(i, j)] += w * dev[i] * dev[j];
            }
        }
    }

    let eig = cov_f.symmetric_eigen();
    let top = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let cutoff = HSCORE_PINV_CUTOFF * top;
    let mut value = 0.0;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= cutoff {
            continue;
        }
        let q = eig.eigenvectors.column(k);
        let quad = (q.transpose() * &cov_g * q)[(0, 0)];
        value += quad / lambda;
    }
    if !value.is_finite() {
        return Err(Error::Numerical("non-finite H-score".into()));
    }
    Ok(value.max(0.0))
}

pub const LOGME_MAX_ITERATIONS: usize = 100;
pub const LOGME_TOLERANCE: f64 = 1e-6;

/// Fixed-point outcome for one one-vs-all target.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMeClass {
    pub class_id: u32,
    pub alpha: f64,
    pub beta: f64,
    /// Maximized log evidence divided by `n`.
    pub evidence_per_sample: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogMe {
    /// Mean of `evidence_per_sample` over classes.
    pub value: f64,
    pub classes: Vec<LogMeClass>,
}

impl LogMe {
    pub fn converged(&self) -> bool {
        self.classes.iter().all(|c| c.converged)
    }
}

/// Spectral view of `F`: eigenvalues of `FᵀF` (nonzero part) and, per target,
/// the squared projections of `y` on the matching left singular vectors.
struct Spectrum {
    n: usize,
    d: usize,
    sigma: Vec<f64>,
    /// `k × n` row-major: row `k` is the left singular vector for `sigma[k]`.
    left: Vec<f64>,
}

impl Spectrum {
    fn new(set: &EmbeddingSet) -> Self {
        let n = set.len();
        let d = set.dim();
        let f: Vec<f64> = set.features().iter().map(|&v| f64::from(v)).collect();
        let fv = linalg::View::row_major(&f, n, d);
        let (sigma, left) = if n <= d {
            // eigenvectors of F Fᵀ are the left singular vectors directly
            let mut g = vec![0.0; n * n];
            linalg::gemm(1.0, fv, fv.t(), 0.0, &mut g, n);
            let eig = DMatrix::from_row_slice(n, n, &g).symmetric_eigen();
            let floor = rank_floor(eig.eigenvalues.as_slice());
            let mut sigma = Vec::new();
            let mut left = Vec::new();
            for k in 0..n {
                let s = eig.eigenvalues[k];
                sigma.push(if s > floor { s } else { 0.0 });
                left.extend(eig.eigenvectors.column(k).iter());
            }
            (sigma, left)
        } else {
            // u_k = F v_k / sqrt(σ_k) for the eigenpairs of FᵀF
            let mut g = vec![0.0; d * d];
            linalg::gemm(1.0, fv.t(), fv, 0.0, &mut g, d);
            let eig = DMatrix::from_row_slice(d, d, &g).symmetric_eigen();
            let floor = rank_floor(eig.eigenvalues.as_slice());
            let mut sigma = Vec::new();
            let mut left = Vec::new();
            for k in 0..d {
                let s = eig.eigenvalues[k];
                let s = if s > floor { s } else { 0.0 };
                let v = eig.eigenvectors.column(k);
                let mut u = vec![0.0; n];
                if s > 0.0 {
                    let scale = 1.0 / s.sqrt();
                    for (i, row) in f.chunks_exact(d).enumerate() {
                        u[i] = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>() * scale;
                    }
                }
                sigma.push(s);
                left.extend(u);
            }
            (sigma, left)
        };
        Self { n, d, sigma, left }
    }
}

/// Eigenvalues of the Gram matrix at or below this are treated as exact zeros.
fn rank_floor(eigenvalues: &[f64]) -> f64 {
    let top = eigenvalues.iter().copied().fold(0.0f64, f64::max);
    1e-12 * top
}

/// Evidence ingredients for fixed `(alpha, beta)`.
struct EvidenceTerms {
    gamma: f64,
    mean_norm2: f64,
    residual2: f64,
    evidence: f64,
}

fn evidence_terms(spec: &Spectrum, x2: &[f64], residual_outside: f64, alpha: f64, beta: f64) -> EvidenceTerms {
    let mut gamma = 0.0;
    let mut mean_norm2 = 0.0;
    let mut residual2 = residual_outside;
    let mut logdet = 0.0;
    for (&s, &x) in spec.sigma.iter().zip(x2) {
        let denom = alpha + beta * s;
        gamma += beta * s / denom;
        mean_norm2 += beta * beta * s * x / (denom * denom);
        let shrink = alpha / denom;
        residual2 += x * shrink * shrink;
        logdet += denom.ln();
    }
    // eigenvalues of FᵀF beyond the rank of F are zero
    logdet += (spec.d - spec.sigma.len().min(spec.d)) as f64 * alpha.ln();
    let n = spec.n as f64;
    let evidence = 0.5 * spec.d as f64 * alpha.ln() + 0.5 * n * beta.ln()
        - 0.5 * alpha * mean_norm2
        - 0.5 * beta * residual2
        - 0.5 * logdet
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    EvidenceTerms {
        gamma,
        mean_norm2,
        residual2,
        evidence,
    }
}

/// Exact log marginal likelihood of `y` under the Bayesian linear model
/// `y = F w + ε`, `w ~ N(0, α⁻¹ I)`, `ε ~ N(0, β⁻¹ I)`, for a single target.
fn evidence_for_target(spec: &Spectrum, y: &[f64]) -> (Vec<f64>, f64) {
    let mut x2 = Vec::with_capacity(spec.sigma.len());
    // residual of y outside the column space, formed explicitly: the
    // difference of squared norms cancels badly and beta can be huge
    let mut rest = y.to_vec();
    for (k, &s) in spec.sigma.iter().enumerate() {
        if s > 0.0 {
            let u = &spec.left[k * spec.n..(k + 1) * spec.n];
            let x: f64 = u.iter().zip(y).map(|(a, b)| a * b).sum();
            x2.push(x * x);
            rest.iter_mut().zip(u).for_each(|(r, v)| *r -= x * v);
        } else {
            x2.push(0.0);
        }
    }
    (x2, rest.iter().map(|v| v * v).sum())
}

fn maximize_evidence(spec: &Spectrum, y: &[f64], class_id: u32) -> LogMeClass {
    let (x2, outside) = evidence_for_target(spec, y);
    let n = spec.n as f64;
    let (mut alpha, mut beta) = (1.0f64, 1.0f64);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < LOGME_MAX_ITERATIONS {
        iterations += 1;
        let t = evidence_terms(spec, &x2, outside, alpha, beta);
        let new_alpha = t.gamma / t.mean_norm2.max(f64::MIN_POSITIVE);
        let new_beta = (n - t.gamma) / t.residual2.max(f64::MIN_POSITIVE);
        let rel = ((new_alpha - alpha) / alpha).abs().max(((new_beta - beta) / beta).abs());
        alpha = new_alpha;
        beta = new_beta;
        if rel < LOGME_TOLERANCE {
            converged = true;
            break;
        }
    }
    let evidence = evidence_terms(spec, &x2, outside, alpha, beta).evidence;
    LogMeClass {
        class_id,
        alpha,
        beta,
        evidence_per_sample: evidence / n,
        iterations,
        converged,
    }
}

/// LogME: mean over classes of the maximized per-sample log evidence of the
/// one-vs-all indicator target.
pub fn logme(set: &EmbeddingSet) -> Result<LogMe> {
    let n = set.len();
    let present = set.present_classes();
    if n < 2 || present.len() < 2 {
        return Err(Error::Argument("LogME needs at least 2 rows and 2 classes".into()));
    }
    let spec = Spectrum::new(set);
    let classes: Vec<LogMeClass> = present
        .par_iter()
        .map(|&c| {
            let y: Vec<f64> = set.labels().iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect();
            maximize_evidence(&spec, &y, c)
        })
        .collect();
    let value = classes.iter().map(|c| c.evidence_per_sample).sum::<f64>() / classes.len() as f64;
    if !value.is_finite() {
        return Err(Error::Numerical("non-finite LogME evidence".into()));
    }
    Ok(LogMe { value, classes })
}

/// Negated mean distance from each target row to its nearest source row.
pub fn ids(source: &EmbeddingSet, target: &EmbeddingSet) -> Result<f64> {
    if source.dim() != target.dim() {
        return Err(Error::Argument(format!(
            "IDS needs equal dimensions, source has {} and target {}",
            source.dim(),
            target.dim()
        )));
    }
    let nearest: Vec<f64> = target
        .features()
        .par_chunks(target.dim())
        .map(|t| {
            source
                .rows()
                .map(|s| {
                    s.iter()
                        .zip(t)
                        .map(|(&a, &b)| {
                            let d = f64::from(a) - f64::from(b);
                            d * d
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    let mean = nearest.iter().sum::<f64>() / nearest.len() as f64;
    Ok(if mean == 0.0 { 0.0 } else { -mean })
}
