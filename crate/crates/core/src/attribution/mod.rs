//! Path-integrated and gradient-based feature attribution.
//!
//! Every path method reduces to [`path_attribution`]: a Riemann sum of
//! `∇F(x_i) ⊙ (x_{i+1} - x_i)` along a discretized path ending at the input.
//! Integrated gradients also has a recorded form, [`integrated_gradients_var`],
//! whose output can be differentiated again by attacks.

mod maps;

pub use maps::{normalize_map, percentile, AttributionMap, Method, PathKind};

use serde::{Deserialize, Serialize};

use crate::autodiff::{GaussianBlur, Graph, Var};
use crate::error::{Error, Result};
use crate::geodesic::{decode_curve, LatentCurve};
use crate::models::{as_row, score_and_grad_batch, score_one, ActivationMode, Classifier, Generator, Scorer};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

/// Where each Riemann-sum term evaluates the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    #[default]
    Left,
    Midpoint,
}

impl Rule {
    fn fractions(self, steps: usize) -> Vec<f64> {
        let n = steps as f64;
        match self {
            Rule::Left => (0..steps).map(|k| k as f64 / n).collect(),
            Rule::Midpoint => (0..steps).map(|k| (k as f64 + 0.5) / n).collect(),
        }
    }
}

fn check_steps(steps: usize) -> Result<()> {
    if steps == 0 {
        return Err(Error::InvalidArgument("path needs at least one step".into()));
    }
    Ok(())
}

/// `Σ_i ∇F(p_i) ⊙ (x_{i+1} - x_i)` for a path given as rows of `points`
/// (`[N+1, D]`). `p_i` is `x_i` under the left rule and the segment midpoint
/// under the midpoint rule. Returns a flat `[D]` tensor.
pub fn path_attribution(f: &dyn Scorer, points: &Tensor, rule: Rule) -> Result<Tensor> {
    let (rows, dim) = points.dims2("path_attribution")?;
    if rows < 2 {
        return Err(Error::InvalidArgument("path needs at least two points".into()));
    }
    if dim != f.input_dim() {
        return Err(Error::shape("path_attribution", points.shape(), &[f.input_dim()]));
    }
    let n = rows - 1;
    let eval = match rule {
        Rule::Left => points.slice_rows(0, n)?,
        Rule::Midpoint => {
            let mut data = Vec::with_capacity(n * dim);
            for i in 0..n {
                let (a, b) = (points.row(i), points.row(i + 1));
                data.extend(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)));
            }
            Tensor::from_parts(vec![n, dim], data)
        }
    };
    let (_, grads) = score_and_grad_batch(f, &eval)?;
    let mut out = vec![0.0; dim];
    for i in 0..n {
        let (a, b, gr) = (points.row(i), points.row(i + 1), grads.row(i));
        for j in 0..dim {
            out[j] += gr[j] * (b[j] - a[j]);
        }
    }
    Ok(Tensor::from_parts(vec![dim], out))
}

/// Recorded integrated gradients of `x: [1, D]` against a fixed baseline:
/// `(x - x') ⊙ mean_k ∇F(x' + t_k (x - x'))`. The result is a `[1, D]`
/// variable that depends differentiably on `x`.
pub fn integrated_gradients_var<'g>(
    f: &dyn Scorer,
    g: &'g Graph,
    x: Var<'g>,
    baseline: &Tensor,
    steps: usize,
    rule: Rule,
) -> Result<Var<'g>> {
    check_steps(steps)?;
    let dim = f.input_dim();
    if x.shape() != [1, dim] || baseline.numel() != dim {
        return Err(Error::shape("integrated_gradients", &x.shape(), baseline.shape()));
    }
    let base = g.leaf(as_row(baseline));
    let diff = x.sub(base)?;
    let alphas = g.leaf(Tensor::from_parts(vec![steps, 1], rule.fractions(steps)));
    let path = base.repeat_rows(steps)?.add(alphas.matmul(diff)?)?;
    let scores = f.score(g, path)?;
    let grads = g.grad(scores.sum(), &[path])?[0];
    grads.sum_rows().scale(1.0 / steps as f64).mul(diff)
}

fn check_pair(x: &Tensor, baseline: &Tensor) -> Result<()> {
    if x.shape() != baseline.shape() {
        return Err(Error::shape("attribution", x.shape(), baseline.shape()));
    }
    Ok(())
}

/// Integrated gradients along the straight line from `baseline` to `x`, in
/// the shape of `x`.
pub fn integrated_gradients(f: &dyn Scorer, x: &Tensor, baseline: &Tensor, steps: usize, rule: Rule) -> Result<Tensor> {
    check_pair(x, baseline)?;
    let g = Graph::new();
    let xv = g.leaf(as_row(x));
    let ig = integrated_gradients_var(f, &g, xv, baseline, steps, rule)?;
    ig.value().reshape(x.shape())
}

/// Decoded data-space path of a latent curve resampled to `steps` segments.
pub fn manifold_path(gen: &dyn Generator, curve: &LatentCurve, steps: usize) -> Result<Tensor> {
    check_steps(steps)?;
    let curve = if curve.steps() == steps {
        curve.clone()
    } else {
        curve.resample(steps.max(2))?
    };
    if curve.dim() != gen.latent_dim() {
        return Err(Error::shape("mig", &[curve.dim()], &[gen.latent_dim()]));
    }
    let decoded = decode_curve(&curve, gen)?;
    if steps == 1 {
        // a single segment joins the decoded endpoints directly
        let last = decoded.shape()[0] - 1;
        let mut data = decoded.row(0).to_vec();
        data.extend_from_slice(decoded.row(last));
        return Ok(Tensor::from_parts(vec![2, decoded.shape()[1]], data));
    }
    Ok(decoded)
}

/// Manifold integrated gradients along a latent curve (normally a geodesic):
/// the path attribution of `g(z(t))`, with the curve resampled piecewise
/// linearly to `steps` segments. Returns a flat `[D]` tensor.
pub fn mig(f: &dyn Scorer, gen: &dyn Generator, curve: &LatentCurve, steps: usize, rule: Rule) -> Result<Tensor> {
    path_attribution(f, &manifold_path(gen, curve, steps)?, rule)
}

/// Path attribution along the decoded straight latent segment `z0 -> zt`.
pub fn eig(f: &dyn Scorer, gen: &dyn Generator, z0: &Tensor, zt: &Tensor, steps: usize, rule: Rule) -> Result<Tensor> {
    check_steps(steps)?;
    let curve = LatentCurve::linear(z0, zt, steps.max(2))?;
    mig(f, gen, &curve, steps, rule)
}

/// Blur path `L(x, σ_k)` with `σ_k = max_sigma (1 - k/N)`, from the fully
/// blurred image to `x` itself, as `[N+1, H*W]`. Every point shares the
/// kernel radius of `max_sigma`.
pub fn blur_path(image: &Tensor, max_sigma: f64, steps: usize) -> Result<Tensor> {
    check_steps(steps)?;
    let (h, w) = match image.shape() {
        [h, w] => (*h, *w),
        other => return Err(Error::shape("blur_ig", other, &[0, 0])),
    };
    if !(max_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("max sigma {max_sigma} must be non-negative")));
    }
    let radius = (3.0 * max_sigma).ceil() as usize;
    let mut data = Vec::with_capacity((steps + 1) * h * w);
    for k in 0..=steps {
        let sigma = max_sigma * (1.0 - k as f64 / steps as f64);
        if k == steps || sigma == 0.0 {
            data.extend_from_slice(image.data());
        } else {
            data.extend(GaussianBlur::with_radius(h, w, sigma, radius)?.apply(image.data()));
        }
    }
    Ok(Tensor::from_parts(vec![steps + 1, h * w], data))
}

/// Blur integrated gradients of a `[H, W]` image.
pub fn blur_ig(f: &dyn Scorer, image: &Tensor, max_sigma: f64, steps: usize, rule: Rule) -> Result<Tensor> {
    let attr = path_attribution(f, &blur_path(image, max_sigma, steps)?, rule)?;
    attr.reshape(image.shape())
}

/// `image` blurred with standard deviation `sigma` (clamped edges).
pub fn blurred(image: &Tensor, sigma: f64) -> Result<Tensor> {
    let (h, w) = image.dims2("blur")?;
    Tensor::new(vec![h, w], GaussianBlur::new(h, w, sigma)?.apply(image.data()))
}

/// How well a path attribution accounts for the score change along its path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Completeness {
    /// Sum of the attribution scores.
    pub total: f64,
    /// `F(end) - F(start)`.
    pub gap: f64,
    /// `|total - gap| / |gap|`.
    pub residual: f64,
}

/// Compares the attribution sum with the score change between the path
/// endpoints.
pub fn completeness(f: &dyn Scorer, attribution: &Tensor, start: &Tensor, end: &Tensor) -> Result<Completeness> {
    let gap = score_one(f, end)? - score_one(f, start)?;
    let total = attribution.sum();
    Ok(Completeness {
        total,
        gap,
        residual: (total - gap).abs() / gap.abs(),
    })
}

/// Settings for [`smooth_ig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SmoothConfig {
    pub noise_sigma: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Mean of integrated gradients over `samples` noisy copies `x + ε_s`,
/// `ε_s ~ N(0, σ² I)`. With `σ = 0` this is integrated gradients itself.
pub fn smooth_ig(
    f: &dyn Scorer,
    x: &Tensor,
    baseline: &Tensor,
    steps: usize,
    rule: Rule,
    config: &SmoothConfig,
) -> Result<Tensor> {
    check_pair(x, baseline)?;
    if config.samples == 0 || !(config.noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid smoothing config {config:?}")));
    }
    if config.noise_sigma == 0.0 {
        return integrated_gradients(f, x, baseline, steps, rule);
    }
    let mut acc = vec![0.0; x.numel()];
    for s in 0..config.samples {
        let mut rng = Rng::new(derive_seed(config.seed, s as u64));
        let noise = rng.normals(x.numel(), config.noise_sigma);
        let noisy = Tensor::from_parts(x.shape().to_vec(), x.data().iter().zip(&noise).map(|(a, b)| a + b).collect());
        let ig = integrated_gradients(f, &noisy, baseline, steps, rule)?;
        for (a, v) in acc.iter_mut().zip(ig.data()) {
            *a += v;
        }
    }
    let n = config.samples as f64;
    Tensor::new(x.shape().to_vec(), acc.into_iter().map(|v| v / n).collect())
}

fn gradient(f: &dyn Scorer, x: &Tensor) -> Result<Tensor> {
    crate::models::grad_one(f, x)
}

/// `|∇F(x)|`.
pub fn saliency(f: &dyn Scorer, x: &Tensor) -> Result<Tensor> {
    Ok(gradient(f, x)?.map(f64::abs))
}

/// `∇F(x) ⊙ x`.
pub fn input_x_gradient(f: &dyn Scorer, x: &Tensor) -> Result<Tensor> {
    gradient(f, x)?.mul(x)
}

/// Gradient of the `class` logit with ReLUs in guided-backprop mode.
pub fn guided_backprop(clf: &Classifier, class: usize, x: &Tensor) -> Result<Tensor> {
    clf.classify_grad(x, class, ActivationMode::GuidedBackprop)
}
