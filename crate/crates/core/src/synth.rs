//! Synthetic scenarios: diagonal Gaussian classes with known overlap.
//!
//! A class with mean `mu` and variances `v` produces samples
//! `mu + noise_scale * sqrt(v) * z`, `z ~ N(0, I)`, so its effective variances
//! are `noise_scale^2 * v`. Class `c` draws from its own stream, independent
//! of the other classes. Rows are laid out class by class.
//!
//! Scenario files are TOML:
//!
//! ```toml
//! seed = 3
//! samples_per_class = 500
//! noise_scale = 1.0
//!
//! [[classes]]
//! mean = [0.0, 0.0]
//! variance = [1.0, 1.0]
//!
//! [[classes]]
//! mean = [2.0, 0.0]
//! variance = [1.0, 0.5]
//! ```

use std::f64::consts::{LN_2, PI};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingSet;
use crate::error::{Error, Result};
use crate::gaussian::ClassGaussian;
use crate::rng::{self, tag, Stream};

/// Samples per Monte-Carlo chunk; each chunk has its own stream.
pub const MC_CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        let g = Self { mean, variance };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if self.mean.is_empty() || self.mean.len() != self.variance.len() {
            return Err(Error::Argument(format!(
                "gaussian needs matching non-empty mean ({}) and variance ({})",
                self.mean.len(),
                self.variance.len()
            )));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Argument("gaussian mean must be finite".into()));
        }
        if self.variance.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Argument("gaussian variances must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, m), v) in x.iter().zip(&self.mean).zip(&self.variance) {
            let d = xi - m;
            acc += d * d / v + v.ln();
        }
        -0.5 * (acc + self.dim() as f64 * (2.0 * PI).ln())
    }

    fn sample_into(&self, rng: &mut Stream, out: &mut [f64]) {
        for ((o, m), v) in out.iter_mut().zip(&self.mean).zip(&self.variance) {
            let z: f64 = StandardNormal.sample(rng);
            *o = m + v.sqrt() * z;
        }
    }

    /// Variances scaled by `scale^2`.
    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            mean: self.mean.clone(),
            variance: self.variance.iter().map(|v| v * scale * scale).collect(),
        }
    }

    pub fn to_class_gaussian(&self, class_id: u32) -> Result<ClassGaussian> {
        ClassGaussian::diagonal(class_id, self.mean.clone(), self.variance.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScenario {
    pub classes: Vec<DiagGaussian>,
    pub samples_per_class: usize,
    #[serde(default = "one")]
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl SyntheticScenario {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Argument(format!("scenario needs >= 2 classes, got {}", self.classes.len())));
        }
        for g in &self.classes {
            g.validate()?;
        }
        let d = self.classes[0].dim();
        if self.classes.iter().any(|g| g.dim() != d) {
            return Err(Error::Argument("scenario classes differ in dimension".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Argument("samples_per_class must be >= 1".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Argument("noise_scale must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.classes[0].dim()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Validation(format!("scenario spec: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Validation(r) | Error::Argument(r) => Error::format(path, r),
            other => other,
        })
    }

    /// [`short_hash`](crate::config::short_hash) of the scenario's TOML rendering.
    pub fn fingerprint(&self) -> String {
        crate::config::short_hash(&toml::to_string(self).unwrap_or_default())
    }

    /// Class distributions of the generated samples.
    pub fn effective_classes(&self) -> Vec<DiagGaussian> {
        self.classes.iter().map(|g| g.scaled(self.noise_scale)).collect()
    }
}

pub fn generate(scenario: &SyntheticScenario) -> Result<EmbeddingSet> {
    scenario.validate()?;
    let d = scenario.dim();
    let n = scenario.samples_per_class;
    let blocks: Vec<Vec<f32>> = scenario
        .classes
        .par_iter()
        .enumerate()
        .map(|(c, g)| {
            let mut rng = rng::stream(scenario.seed, tag::SYNTH, c as u64);
            let mut out = Vec::with_capacity(n * d);
            for _ in 0..n {
                for (m, v) in g.mean.iter().zip(&g.variance) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    out.push((m + scenario.noise_scale * v.sqrt() * z) as f32);
                }
            }
            out
        })
        .collect();
    let labels = (0..scenario.classes.len() as u32)
        .flat_map(|c| std::iter::repeat_n(c, n))
        .collect();
    EmbeddingSet::new(blocks.concat(), d, labels, scenario.classes.len(), "synthetic")
}

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub standard_error: f64,
    pub samples: usize,
}

/// Average `f` over `samples` draws, in fixed chunks reduced in order.
fn mc_mean<F>(samples: usize, seed: u64, stream_tag: u64, f: F) -> McEstimate
where
    F: Fn(&mut Stream) -> f64 + Sync,
{
    let chunks = samples.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut rng = rng::stream(seed, stream_tag, c as u64);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..len {
                let v = f(&mut rng);
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .collect();
    let (mut s, mut s2) = (0.0, 0.0);
    for (a, b) in partial {
        s += a;
        s2 += b;
    }
    let n = samples as f64;
    let mean = s / n;
    let var = if samples > 1 { ((s2 - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    McEstimate {
        estimate: mean,
        standard_error: (var / n).sqrt(),
        samples,
    }
}

/// Estimate the overlap integral of `sqrt(p q)` by importance sampling from
/// the mixture `(p + q) / 2`.
pub fn mc_bhattacharyya(p: &DiagGaussian, q: &DiagGaussian, samples: usize, seed: u64) -> Result<McEstimate> {
    p.validate()?;
    q.validate()?;
    if p.dim() != q.dim() {
        return Err(Error::Argument(format!("dimension mismatch: {} vs {}", p.dim(), q.dim())));
    }
    if samples == 0 {
        return Err(Error::Argument("samples must be >= 1".into()));
    }
    let d = p.dim();
    Ok(mc_mean(samples, seed, tag::MONTE_CARLO, |rng| {
        let mut x = vec![0.0; d];
        if rng::unit(rng) < 0.5 {
            p.sample_into(rng, &mut x);
        } else {
            q.sample_into(rng, &mut x);
        }
        let (lp, lq) = (p.log_pdf(&x), q.log_pdf(&x));
        let hi = lp.max(lq);
        let log_mix = hi + ((lp - hi).exp() + (lq - hi).exp()).ln() - LN_2;
        (0.5 * (lp + lq) - log_mix).exp()
    }))
}

/// Error rate of the Bayes classifier on fresh samples of the scenario.
/// Priors follow the class sample counts (equal here); ties in the posterior
/// go to the lowest class index.
pub fn bayes_error_estimate(scenario: &SyntheticScenario, samples: usize, seed: u64) -> Result<McEstimate> {
    scenario.validate()?;
    if scenario.noise_scale == 0.0 {
        return Err(Error::Argument("bayes error needs noise_scale > 0".into()));
    }
    if samples == 0 {
        return Err(Error::Argument("samples must be >= 1".into()));
    }
    let classes = scenario.effective_classes();
    let c = classes.len() as u64;
    let d = scenario.dim();
    Ok(mc_mean(samples, seed, tag::BAYES, |rng| {
        let truth = rng::below(rng, c) as usize;
        let mut x = vec![0.0; d];
        classes[truth].sample_into(rng, &mut x);
        let mut best = 0;
        let mut best_ll = f64::NEG_INFINITY;
        for (k, g) in classes.iter().enumerate() {
            let ll = g.log_pdf(&x);
            if ll > best_ll {
                best = k;
                best_ll = ll;
            }
        }
        if best == truth {
            0.0
        } else {
            1.0
        }
    }))
}

/// Three classes in 8 dimensions with means `s * e_c` and unit variances,
/// one scenario per separation `s`.
pub fn separation_family(separations: &[f64], samples_per_class: usize, seed: u64) -> Vec<SyntheticScenario> {
    const DIM: usize = 8;
    const CLASSES: usize = 3;
    separations
        .iter()
        .enumerate()
        .map(|(i, &s)| SyntheticScenario {
            classes: (0..CLASSES)
                .map(|c| {
                    let mut mean = vec![0.0; DIM];
                    mean[c] = s;
                    DiagGaussian {
                        mean,
                        variance: vec![1.0; DIM],
                    }
                })
                .collect(),
            samples_per_class,
            noise_scale: 1.0,
            seed: rng::derive_seed(seed, tag::SYNTH, i as u64),
        })
        .collect()
}
