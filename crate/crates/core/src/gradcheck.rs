//! Finite-difference checks of reverse-mode gradients.
//!
//! [`primitive_suite`] exercises every differentiable primitive of the tape,
//! first and second order; [`network_suite`] covers the end-to-end gradients
//! the models, attacks and geodesic solver rely on.

use std::sync::Arc;

use crate::attacks::targeted_loss_and_grad;
use crate::attribution::Rule;
use crate::autodiff::{GaussianBlur, Graph, Var};
use crate::error::{Error, Result};
use crate::geodesic::{discrete_energy, energy_and_gradient, GradientMode, LatentCurve};
use crate::models::{
    cross_entropy, Activation, ActivationMode, Classifier, ClassifierArch, FeatureProjection, LossWeights, Mlp, Vae,
    VaeArch,
};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Pass threshold on [`relative_error`].
pub const TOLERANCE: f64 = 1e-6;

/// `‖a - b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vanish.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of a scalar function of several tensors.
pub fn finite_difference<F>(inputs: &[Tensor], h: f64, f: F) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut grad = vec![0.0; inputs[k].numel()];
        for (i, slot) in grad.iter_mut().enumerate() {
            let orig = inputs[k].data()[i];
            work[k] = with_entry(&inputs[k], i, orig + h);
            let plus = f(&work)?;
            work[k] = with_entry(&inputs[k], i, orig - h);
            let minus = f(&work)?;
            *slot = (plus - minus) / (2.0 * h);
        }
        work[k] = inputs[k].clone();
        out.push(Tensor::from_parts(inputs[k].shape().to_vec(), grad));
    }
    Ok(out)
}

fn with_entry(t: &Tensor, i: usize, v: f64) -> Tensor {
    let mut data = t.data().to_vec();
    data[i] = v;
    Tensor::from_parts(t.shape().to_vec(), data)
}

fn eval_scalar<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let y = f(&g, &vars)?;
    if y.value().numel() != 1 {
        return Err(Error::NonScalarRoot(y.shape()));
    }
    Ok(y.value().item())
}

/// Largest relative error between the tape gradient of a scalar function and
/// its central differences, over all inputs.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let y = f(&g, &vars)?;
    let analytic: Vec<Tensor> = g.grad(y, &vars)?.iter().map(|v| (*v.value()).clone()).collect();
    let numeric = finite_difference(inputs, h, |xs| eval_scalar(xs, &f))?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

/// Compares a precomputed gradient against central differences of `f`.
pub fn check_value_grad<F>(x: &Tensor, analytic: &Tensor, h: f64, f: F) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    let numeric = finite_difference(std::slice::from_ref(x), h, |xs| f(&xs[0]))?;
    Ok(relative_error(analytic, &numeric[0]))
}

/// Worst error of one named check over its trials.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub max_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error <= TOLERANCE
    }
}

type Build = for<'g> fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>;

/// How a primitive's inputs are drawn.
#[derive(Debug, Clone, Copy)]
enum Domain {
    Any,
    Positive,
    /// Bounded away from zero, for kinks and poles.
    AwayFromZero,
}

struct Primitive {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    domain: Domain,
    build: Build,
    /// Differentiable twice, so the gradient itself is checked too.
    smooth: bool,
}

fn sample(shape: &[usize], domain: Domain, rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| match domain {
            Domain::Any => rng.uniform_in(-2.0, 2.0),
            Domain::Positive => rng.uniform_in(0.2, 3.0),
            Domain::AwayFromZero => {
                let v = rng.uniform_in(0.1, 2.0);
                if rng.uniform() < 0.5 {
                    -v
                } else {
                    v
                }
            }
        })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

fn kernel() -> Arc<GaussianBlur> {
    Arc::new(GaussianBlur::new(5, 6, 1.3).expect("valid blur"))
}

fn mask() -> Arc<Vec<bool>> {
    Arc::new((0..12).map(|i| i % 3 != 1).collect())
}

fn primitives() -> Vec<Primitive> {
    const M: &[usize] = &[3, 4];
    const ROW: &[usize] = &[1, 4];
    const ONE: &[usize] = &[1];
    const PLANE: &[usize] = &[2, 5, 6];
    fn p(name: &'static str, shapes: &'static [&'static [usize]], domain: Domain, smooth: bool, build: Build) -> Primitive {
        Primitive { name, shapes, domain, build, smooth }
    }
    use Domain::*;
    vec![
        p("add", &[M, M], Any, true, |_, v| v[0].add(v[1])),
        p("sub", &[M, M], Any, true, |_, v| v[0].sub(v[1])),
        p("mul", &[M, M], Any, true, |_, v| v[0].mul(v[1])),
        p("div", &[M, M], AwayFromZero, true, |_, v| v[0].div(v[1])),
        p("scale", &[M], Any, true, |_, v| Ok(v[0].scale(-1.7))),
        p("add_scalar", &[M], Any, true, |_, v| Ok(v[0].add_scalar(0.3))),
        p("mul_scalar", &[M, ONE], Any, true, |_, v| v[0].mul_scalar(v[1])),
        p("matmul", &[&[3, 4], &[4, 2]], Any, true, |_, v| v[0].matmul(v[1])),
        p("transpose", &[M], Any, true, |_, v| v[0].transpose()),
        p("sum", &[M], Any, true, |_, v| Ok(v[0].sum())),
        p("mean", &[M], Any, true, |_, v| Ok(v[0].mean())),
        p("dot", &[M, M], Any, true, |_, v| v[0].dot(v[1])),
        p("broadcast", &[ONE], Any, true, |_, v| v[0].broadcast_to(&[3, 4])),
        p("sum_rows", &[M], Any, true, |_, v| Ok(v[0].sum_rows())),
        p("repeat_rows", &[ROW], Any, true, |_, v| v[0].repeat_rows(3)),
        p("tanh", &[M], Any, true, |_, v| Ok(v[0].tanh())),
        p("sigmoid", &[M], Any, true, |_, v| Ok(v[0].sigmoid())),
        p("exp", &[M], Any, true, |_, v| Ok(v[0].exp())),
        p("log", &[M], Positive, true, |_, v| Ok(v[0].log())),
        p("square", &[M], Any, true, |_, v| Ok(v[0].square())),
        p("sqrt", &[M], Positive, true, |_, v| Ok(v[0].sqrt())),
        p("sin", &[M], Any, true, |_, v| Ok(v[0].sin())),
        p("cos", &[M], Any, true, |_, v| Ok(v[0].cos())),
        p("softplus", &[M], Any, true, |_, v| Ok(v[0].softplus())),
        p("softplus_beta", &[M], Any, true, |_, v| Ok(v[0].softplus_beta(10.0))),
        p("elu", &[M], AwayFromZero, true, |_, v| Ok(v[0].elu())),
        p("silu", &[M], Any, true, |_, v| Ok(v[0].silu())),
        p("relu", &[M], AwayFromZero, false, |_, v| Ok(v[0].relu())),
        p("select", &[M, M], Any, true, |_, v| v[0].select(mask(), Some(v[1]))),
        p("reshape", &[M], Any, true, |_, v| v[0].reshape(&[2, 6])),
        p("slice_rows", &[&[5, 2]], Any, true, |_, v| v[0].slice_rows(1, 4)),
        p("pad_rows", &[&[2, 3]], Any, true, |_, v| v[0].pad_rows(1, 4)),
        p("concat_rows", &[&[2, 3], &[1, 3], &[3, 3]], Any, true, |g, v| g.concat_rows(v)),
        p("blur", &[PLANE], Any, true, |_, v| v[0].blur(&kernel())),
        p("blur_adjoint", &[PLANE], Any, true, |_, v| v[0].blur_adjoint(&kernel())),
    ]
}

/// Scalarizes `build` as `⟨build(x), w⟩` so every output entry contributes.
fn weighted(build: Build, inputs: &[Tensor], w: &Tensor) -> impl for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>> {
    let (w, n) = (w.clone(), inputs.len());
    move |g: &Graph, v: &[Var]| build(g, &v[..n])?.dot(g.leaf(w.clone()))
}

fn output_shape(build: Build, inputs: &[Tensor]) -> Result<Vec<usize>> {
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    Ok(build(&g, &vars)?.shape())
}

/// Checks every primitive over `trials` random draws. Smooth primitives also
/// get a second-order check of `x ↦ ⟨∇⟨op(x), w⟩, u⟩`.
pub fn primitive_suite(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    for (k, prim) in primitives().into_iter().enumerate() {
        let mut rng = Rng::new(derive_seed(seed, k as u64));
        let (mut first, mut second) = (0.0f64, 0.0f64);
        for _ in 0..trials {
            let inputs: Vec<Tensor> = prim.shapes.iter().map(|s| sample(s, prim.domain, &mut rng)).collect();
            let w = sample(&output_shape(prim.build, &inputs)?, Domain::Any, &mut rng);
            first = first.max(check(&inputs, FD_STEP, weighted(prim.build, &inputs, &w))?);
            if prim.smooth {
                let u: Vec<Tensor> = inputs.iter().map(|t| sample(t.shape(), Domain::Any, &mut rng)).collect();
                let inner = weighted(prim.build, &inputs, &w);
                let err = check(&inputs, FD_STEP, |g, v| {
                    let y = inner(g, v)?;
                    let grads = g.grad(y, v)?;
                    let mut acc = grads[0].dot(g.leaf(u[0].clone()))?;
                    for (gr, ui) in grads.iter().zip(&u).skip(1) {
                        acc = acc.add(gr.dot(g.leaf(ui.clone()))?)?;
                    }
                    Ok(acc)
                })?;
                second = second.max(err);
            }
        }
        results.push(CheckResult { name: prim.name.to_string(), trials, max_error: first });
        if prim.smooth {
            let name = format!("{} (second order)", prim.name);
            results.push(CheckResult { name, trials, max_error: second });
        }
    }
    Ok(results)
}

/// Smallest `|pre-activation|` at a kinked (ReLU or ELU) unit, over all rows.
fn kink_margin(net: &Mlp, x: &Tensor) -> Result<f64> {
    let mut h = x.clone();
    let mut margin = f64::INFINITY;
    for layer in net.layers() {
        let rows = h.shape()[0];
        let bias = Tensor::from_parts(vec![rows, layer.outputs()], layer.bias.data().repeat(rows));
        let pre = h.matmul(&layer.weight)?.add(&bias)?;
        if matches!(layer.activation, Activation::Relu | Activation::Elu) {
            margin = pre.data().iter().fold(margin, |m, v| m.min(v.abs()));
        }
        h = Mlp::new(vec![layer.clone()])?.forward_tensor(&h, ActivationMode::Native)?;
    }
    Ok(margin)
}

fn jitter(net: &Mlp, rng: &mut Rng) -> Result<Mlp> {
    let params = net
        .params()
        .iter()
        .map(|p| Arc::new(p.add(&Tensor::from_parts(p.shape().to_vec(), rng.normals(p.numel(), 0.2))).expect("same shape")))
        .collect();
    net.with_params(params)
}

/// Draws inputs until every kinked unit is at least `1e-3` from its kink, so
/// that central differences never straddle one.
fn away_from_kinks(net: &Mlp, rows: usize, rng: &mut Rng) -> Result<Tensor> {
    let dim = net.input_dim();
    for _ in 0..1000 {
        let x = Tensor::from_parts(vec![rows, dim], (0..rows * dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect());
        if kink_margin(net, &x)? >= 1e-3 {
            return Ok(x);
        }
    }
    Err(Error::InvalidArgument("could not draw an input away from activation kinks".into()))
}

fn small_classifier(rng: &mut Rng) -> Result<Classifier> {
    let arch = ClassifierArch { input_dim: 12, hidden: vec![8, 6], num_classes: 3 };
    let clf = Classifier::init(&arch, rng.next_u64())?;
    Classifier::from_net(jitter(clf.net(), rng)?, true)
}

fn small_vae(rng: &mut Rng) -> Result<Vae> {
    let vae = Vae::init(&VaeArch::new(12, 3, vec![8])?, rng.next_u64())?;
    let [enc, mu, lv, dec] = vae.components().map(|(_, net)| net.clone());
    Vae::from_parts(jitter(&enc, rng)?, jitter(&mu, rng)?, jitter(&lv, rng)?, jitter(&dec, rng)?, true)
}

fn logit_check(clf: &Classifier, mode: ActivationMode, rng: &mut Rng) -> Result<f64> {
    let x = away_from_kinks(clf.net(), 1, rng)?;
    let class = rng.below(clf.num_classes());
    let f = clf.class_logit(class, mode)?;
    check(&[x], FD_STEP, |g, v| crate::models::Scorer::score(&f, g, v[0]).map(|s| s.sum()))
}

fn cross_entropy_check(clf: &Classifier, rng: &mut Rng) -> Result<f64> {
    let x = away_from_kinks(clf.net(), 5, rng)?;
    let mut targets = vec![0.0; 5 * clf.num_classes()];
    for r in 0..5 {
        targets[r * clf.num_classes() + rng.below(clf.num_classes())] = 1.0;
    }
    let targets = Tensor::from_parts(vec![5, clf.num_classes()], targets);
    let params: Vec<Tensor> = clf.net().params().iter().map(|p| (**p).clone()).collect();
    let net = clf.net().clone();
    check(&params, FD_STEP, |g, v| {
        let logits = net.forward_with(g.leaf(x.clone()), v, ActivationMode::Native)?;
        cross_entropy(logits, &targets)
    })
}

fn vae_loss_check(vae: &Vae, rng: &mut Rng) -> Result<f64> {
    let x = Tensor::from_parts(vec![4, 12], (0..48).map(|_| rng.uniform_in(-1.0, 1.0)).collect());
    let noise = Tensor::from_parts(vec![4, 3], rng.normals(12, 1.0));
    let features = FeatureProjection::new(12, rng.next_u64());
    let weights = LossWeights { kl: 0.5, feature: 0.3 };
    let params: Vec<Tensor> = vae.all_params().iter().map(|p| (**p).clone()).collect();
    check(&params, FD_STEP, |g, v| vae.training_loss(v, g.leaf(x.clone()), &noise, weights, &features))
}

fn decoder_check(vae: &Vae, rng: &mut Rng) -> Result<f64> {
    let z = away_from_kinks(vae.decoder(), 3, rng)?;
    let w = Tensor::from_parts(vec![3, 12], rng.normals(36, 1.0));
    let dec = vae.decoder().clone();
    check(&[z], FD_STEP, |g, v| dec.forward(g, v[0], ActivationMode::Native)?.dot(g.leaf(w.clone())))
}

fn energy_check(vae: &Vae, rng: &mut Rng) -> Result<f64> {
    let points = Tensor::from_parts(vec![7, 3], rng.normals(21, 1.0));
    let curve = LatentCurve::from_points(points.clone())?;
    let (_, grad) = energy_and_gradient(&curve, vae, GradientMode::Exact, None)?;
    let interior = points.slice_rows(1, 6)?;
    check_value_grad(&interior, &grad, FD_STEP, |inner| {
        let mut rows = points.clone();
        rows.data_mut()[3..18].copy_from_slice(inner.data());
        discrete_energy(&LatentCurve::from_points(rows)?, vae)
    })
}

fn attack_check(clf: &Classifier, rng: &mut Rng) -> Result<f64> {
    let f = clf.class_logit(rng.below(clf.num_classes()), ActivationMode::SoftplusSwap { beta: 10.0 })?;
    let x = Tensor::from_parts(vec![12], (0..12).map(|_| rng.uniform_in(-1.0, 1.0)).collect());
    let baseline = Tensor::full(&[12], -1.0);
    let target = Tensor::from_parts(vec![12], rng.normals(12, 0.3));
    let (_, grad) = targeted_loss_and_grad(&f, &x, &baseline, &target, 0.7, 10.0, 8, Rule::Left)?;
    check_value_grad(&x, &grad.reshape(&[12])?, FD_STEP, |xv| {
        Ok(targeted_loss_and_grad(&f, xv, &baseline, &target, 0.7, 10.0, 8, Rule::Left)?.0)
    })
}

/// End-to-end gradients on small randomly initialized networks.
pub fn network_suite(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let checks: [(&'static str, fn(&mut Rng) -> Result<f64>); 7] = [
        ("classifier logit wrt input", |r| logit_check(&small_classifier(r)?, ActivationMode::Native, r)),
        ("classifier logit wrt input (softplus swap)", |r| {
            logit_check(&small_classifier(r)?, ActivationMode::SoftplusSwap { beta: 10.0 }, r)
        }),
        ("cross-entropy wrt classifier parameters", |r| cross_entropy_check(&small_classifier(r)?, r)),
        ("vae training loss wrt parameters", |r| vae_loss_check(&small_vae(r)?, r)),
        ("decoder output wrt latent", |r| decoder_check(&small_vae(r)?, r)),
        ("curve energy wrt interior points", |r| energy_check(&small_vae(r)?, r)),
        ("targeted attack loss wrt input", |r| attack_check(&small_classifier(r)?, r)),
    ];
    checks
        .iter()
        .enumerate()
        .map(|(k, (name, run))| {
            let mut rng = Rng::new(derive_seed(seed, 100 + k as u64));
            let mut worst = 0.0f64;
            for _ in 0..trials {
                worst = worst.max(run(&mut rng)?);
            }
            Ok(CheckResult { name: name.to_string(), trials, max_error: worst })
        })
        .collect()
}
