//! Explanation quality metrics: infidelity, maximum sensitivity and SSIM.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{score_batch, score_one, Scorer};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

/// Monte-Carlo settings shared by the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct MetricConfig {
    /// Standard deviation of the infidelity baseline noise.
    pub sigma: f64,
    /// Infidelity draws.
    pub samples: usize,
    /// Half-width of the ∞-ball for maximum sensitivity.
    pub radius: f64,
    pub sensitivity_samples: usize,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            sigma: 0.2,
            samples: 64,
            radius: 0.1,
            sensitivity_samples: 32,
            ssim_window: 11,
            ssim_sigma: 1.5,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
            seed: 0,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma >= 0.0
            && self.samples >= 1
            && self.radius >= 0.0
            && self.sensitivity_samples >= 1
            && self.ssim_window % 2 == 1
            && self.ssim_sigma > 0.0
            && self.ssim_c1 >= 0.0
            && self.ssim_c2 >= 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid metric config {self:?}")));
        }
        Ok(())
    }

    /// Short hex digest of the canonical JSON form, for result tables.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// First 16 hex digits of the SHA-256 of a value's JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Sample mean and standard error of the mean.
    pub fn from_samples(samples: &[f64]) -> Estimate {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        if samples.len() < 2 {
            return Estimate { value: mean, stderr: 0.0 };
        }
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Estimate {
            value: mean,
            stderr: (var / n).sqrt(),
        }
    }
}

/// Explanation infidelity `E[(⟨ξ, Φ⟩ - (f(x) - f(x - ξ)))²]` with
/// `ξ = x - (x0 + ε)`, `ε ~ N(0, σ² I)`.
pub fn infidelity(f: &dyn Scorer, phi: &Tensor, x: &Tensor, x0: &Tensor, config: &MetricConfig) -> Result<Estimate> {
    config.validate()?;
    if phi.numel() != x.numel() || x0.numel() != x.numel() {
        return Err(Error::shape("infidelity", phi.shape(), x.shape()));
    }
    let dim = x.numel();
    let fx = score_one(f, x)?;
    let mut perturbed = Vec::with_capacity(config.samples * dim);
    for m in 0..config.samples {
        let mut rng = Rng::new(derive_seed(config.seed, m as u64));
        let eps = rng.normals(dim, config.sigma);
        perturbed.extend(x0.data().iter().zip(&eps).map(|(b, e)| b + e));
    }
    let perturbed = Tensor::from_parts(vec![config.samples, dim], perturbed);
    let scores = score_batch(f, &perturbed)?;
    let values: Vec<f64> = (0..config.samples)
        .map(|m| {
            let row = perturbed.row(m);
            let predicted: f64 = x.data().iter().zip(row).zip(phi.data()).map(|((a, b), p)| (a - b) * p).sum();
            (predicted - (fx - scores[m])).powi(2)
        })
        .collect();
    Ok(Estimate::from_samples(&values))
}

/// Perturbations `δ` drawn uniformly from the ∞-ball of radius `r`, one per
/// sample, each from its own derived stream. Larger radii scale the same
/// unit draws.
pub fn sensitivity_offsets(dim: usize, config: &MetricConfig) -> Vec<Vec<f64>> {
    (0..config.sensitivity_samples)
        .map(|s| {
            let mut rng = Rng::new(derive_seed(config.seed, s as u64));
            (0..dim).map(|_| config.radius * rng.uniform_in(-1.0, 1.0)).collect()
        })
        .collect()
}

/// Largest `‖Φ(x + δ) - Φ(x)‖₂` over sampled perturbations. `explain` maps an
/// input to its attribution map. A maximum has no standard error, so the
/// returned `stderr` is always zero.
pub fn max_sensitivity<E>(explain: E, x: &Tensor, config: &MetricConfig) -> Result<Estimate>
where
    E: Fn(&Tensor) -> Result<Tensor> + Sync,
{
    config.validate()?;
    if config.radius == 0.0 {
        return Ok(Estimate { value: 0.0, stderr: 0.0 });
    }
    let base = explain(x)?;
    let offsets = sensitivity_offsets(x.numel(), config);
    let distances: Vec<f64> = offsets
        .par_iter()
        .map(|delta| {
            let moved = Tensor::from_parts(
                x.shape().to_vec(),
                x.data().iter().zip(delta).map(|(a, d)| a + d).collect(),
            );
            Ok(explain(&moved)?.sub(&base)?.norm())
        })
        .collect::<Result<_>>()?;
    Ok(Estimate {
        value: distances.into_iter().fold(0.0, f64::max),
        stderr: 0.0,
    })
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let mut w = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (di, dj) = (i as f64 - c, j as f64 - c);
            w.push((-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Mean local SSIM of two `[H, W]` maps with a Gaussian window, over every
/// window position that fits entirely inside the image.
pub fn ssim(a: &Tensor, b: &Tensor, config: &MetricConfig) -> Result<f64> {
    config.validate()?;
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    let (h, w) = a.dims2("ssim")?;
    let k = config.ssim_window;
    if h < k || w < k {
        return Err(Error::InvalidArgument(format!("{h}x{w} image is smaller than the {k}x{k} window")));
    }
    let win = gaussian_window(k, config.ssim_sigma);
    let (c1, c2) = (config.ssim_c1, config.ssim_c2);
    let (ad, bd) = (a.data(), b.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for top in 0..=h - k {
        for left in 0..=w - k {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wt = win[i * k + j];
                    let idx = (top + i) * w + left + j;
                    let (x, y) = (ad[idx], bd[idx]);
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * x * y;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
