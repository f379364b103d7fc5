//! Attributional attacks against integrated gradients.
//!
//! Both attacks run sign-gradient descent inside the ε-∞-ball around the
//! input, clipped to the data range `[-1, 1]`. The attacked explanation is
//! integrated gradients of the predicted-class logit with every ReLU swapped
//! for a softplus, so the loss can be differentiated through the gradients it
//! contains.

use serde::{Deserialize, Serialize};

use crate::attribution::{integrated_gradients, integrated_gradients_var, normalize_map, Method, Rule};
use crate::autodiff::{value_and_grad, Graph, Var};
use crate::error::{Error, Result};
use crate::metrics::{ssim, MetricConfig};
use crate::models::{as_row, ActivationMode, Classifier, Scorer};
use crate::tensor::Tensor;

/// Lower and upper bounds of valid pixel values.
pub const DATA_RANGE: (f64, f64) = (-1.0, 1.0);

/// Class-preservation weights tried by [`targeted_attack_sweep`].
pub const GAMMA_GRID: [f64; 3] = [1.0, 10.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct AttackConfig {
    /// ∞-norm budget.
    pub epsilon: f64,
    /// Weight of the output-preservation term of the targeted loss.
    pub gamma: f64,
    pub steps: usize,
    /// Sign-step length; `None` means `2.5 ε / steps`.
    pub step_size: Option<f64>,
    /// Riemann steps inside the attacked integrated gradients.
    pub ig_steps: usize,
    pub rule: Rule,
    /// Sharpness of the softplus that replaces ReLU during the attack.
    pub beta: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.1,
            gamma: 10.0,
            steps: 200,
            step_size: None,
            ig_steps: 16,
            rule: Rule::Left,
            beta: 10.0,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let step_ok = self.step_size.is_none_or(|s| s >= 0.0);
        if !(self.epsilon >= 0.0) || !(self.gamma >= 0.0) || self.ig_steps == 0 || !(self.beta > 0.0) || !step_ok {
            return Err(Error::InvalidArgument(format!("invalid attack config {self:?}")));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        match self.step_size {
            Some(s) => s,
            None if self.steps == 0 => 0.0,
            None => 2.5 * self.epsilon / self.steps as f64,
        }
    }

    fn mode(&self) -> ActivationMode {
        ActivationMode::SoftplusSwap { beta: self.beta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Targeted,
    Topk,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AttackResult {
    pub kind: AttackKind,
    #[serde(skip)]
    pub x_adv: Tensor,
    /// Attack loss at every iterate, starting with the clean input.
    pub loss_history: Vec<f64>,
    /// Index into `loss_history` of the returned iterate.
    pub best_iterate: usize,
    pub linf: f64,
    pub class: usize,
    pub adv_class: usize,
    pub class_preserved: bool,
    pub gamma: f64,
    /// Targeted: `‖I(x) - I(x_target)‖²`. Top-k: the objective at `x`.
    pub initial_distance: f64,
    /// The same quantity at the returned iterate.
    pub attribution_distance: f64,
    /// Top-k only: `|K ∩ topk(I(x_adv))| / k`.
    pub topk_overlap: Option<f64>,
}

impl AttackResult {
    /// Targeted success: distance at most half the initial one, class kept.
    pub fn halved(&self) -> bool {
        self.class_preserved && self.attribution_distance <= 0.5 * self.initial_distance
    }
}

fn check_input(clf: &Classifier, x: &Tensor, baseline: &Tensor) -> Result<()> {
    if x.numel() != clf.input_dim() || baseline.shape() != x.shape() {
        return Err(Error::shape("attack", x.shape(), &[clf.input_dim()]));
    }
    Ok(())
}

/// Projection onto the ε-ball around `x` intersected with the data range.
fn project(candidate: &[f64], x: &[f64], epsilon: f64) -> Vec<f64> {
    candidate
        .iter()
        .zip(x)
        .map(|(c, x0)| c.clamp(x0 - epsilon, x0 + epsilon).clamp(DATA_RANGE.0, DATA_RANGE.1))
        .collect()
}

fn sign_step(x: &[f64], grad: &[f64], step: f64) -> Vec<f64> {
    x.iter()
        .zip(grad)
        .map(|(v, g)| {
            if *g > 0.0 {
                v - step
            } else if *g < 0.0 {
                v + step
            } else {
                *v
            }
        })
        .collect()
}

fn linf(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Targeted attack loss `‖I(x) - I*‖² + γ (F(x) - F₀)²` and its gradient.
#[allow(clippy::too_many_arguments)]
pub fn targeted_loss_and_grad(
    f: &dyn Scorer,
    x: &Tensor,
    baseline: &Tensor,
    target_attr: &Tensor,
    clean_score: f64,
    gamma: f64,
    steps: usize,
    rule: Rule,
) -> Result<(f64, Tensor)> {
    let target = as_row(target_attr);
    let (value, grad) = value_and_grad(&as_row(x), |g: &Graph, xv: Var<'_>| {
        let ig = integrated_gradients_var(f, g, xv, baseline, steps, rule)?;
        let mismatch = ig.sub(g.leaf(target.clone()))?.square().sum();
        let drift = f.score(g, xv)?.add_scalar(-clean_score).square().sum().scale(gamma);
        mismatch.add(drift)
    })?;
    Ok((value, grad.reshape(x.shape())?))
}

/// Top-k objective `Σ_{j∈K} I_j(x)` and its gradient.
pub fn topk_objective_and_grad(
    f: &dyn Scorer,
    x: &Tensor,
    baseline: &Tensor,
    mask: &Tensor,
    steps: usize,
    rule: Rule,
) -> Result<(f64, Tensor)> {
    let mask = as_row(mask);
    let (value, grad) = value_and_grad(&as_row(x), |g: &Graph, xv: Var<'_>| {
        let ig = integrated_gradients_var(f, g, xv, baseline, steps, rule)?;
        Ok(ig.mul(g.leaf(mask.clone()))?.sum())
    })?;
    Ok((value, grad.reshape(x.shape())?))
}

/// Indices of the `k` largest entries, ties broken by lower index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Integrated gradients as attacked: softplus-swapped logit of `class`.
pub fn attacked_attribution(
    clf: &Classifier,
    class: usize,
    x: &Tensor,
    baseline: &Tensor,
    config: &AttackConfig,
) -> Result<Tensor> {
    let f = clf.class_logit(class, config.mode())?;
    integrated_gradients(&f, x, baseline, config.ig_steps, config.rule)
}

fn squared_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(a.sub(b)?.data().iter().map(|v| v * v).sum())
}

/// Moves `x` so that its integrated-gradients map resembles that of
/// `x_target` while keeping the predicted-class logit close to its clean
/// value. Returns the lowest-loss iterate.
pub fn targeted_attack(
    clf: &Classifier,
    x: &Tensor,
    x_target: &Tensor,
    baseline: &Tensor,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    check_input(clf, x, baseline)?;
    if x_target.shape() != x.shape() {
        return Err(Error::shape("targeted_attack", x_target.shape(), x.shape()));
    }
    let class = clf.predict(x)?;
    let f = clf.class_logit(class, config.mode())?;
    let target_attr = integrated_gradients(&f, x_target, baseline, config.ig_steps, config.rule)?;
    let clean_score = crate::models::score_one(&f, x)?;
    let step = config.step();

    let mut current = x.clone();
    let mut history = Vec::with_capacity(config.steps + 1);
    let (mut best, mut best_iterate, mut best_loss) = (x.clone(), 0, f64::INFINITY);
    for it in 0..=config.steps {
        let (loss, grad) = targeted_loss_and_grad(
            &f,
            &current,
            baseline,
            &target_attr,
            clean_score,
            config.gamma,
            config.ig_steps,
            config.rule,
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0, step: it, value: loss });
        }
        history.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best = current.clone();
            best_iterate = it;
        }
        if it == config.steps {
            break;
        }
        let moved = sign_step(current.data(), grad.data(), step);
        current = Tensor::from_parts(x.shape().to_vec(), project(&moved, x.data(), config.epsilon));
    }

    let initial_attr = integrated_gradients(&f, x, baseline, config.ig_steps, config.rule)?;
    let best_attr = integrated_gradients(&f, &best, baseline, config.ig_steps, config.rule)?;
    let adv_class = clf.predict(&best)?;
    Ok(AttackResult {
        kind: AttackKind::Targeted,
        linf: linf(&best, x),
        x_adv: best,
        loss_history: history,
        best_iterate,
        class,
        adv_class,
        class_preserved: adv_class == class,
        gamma: config.gamma,
        initial_distance: squared_distance(&initial_attr, &target_attr)?,
        attribution_distance: squared_distance(&best_attr, &target_attr)?,
        topk_overlap: None,
    })
}

/// Runs [`targeted_attack`] for each `γ` in `gammas` and keeps the run with
/// the smallest attribution distance among class-preserving runs (or among
/// all runs when none preserves the class).
pub fn targeted_attack_sweep(
    clf: &Classifier,
    x: &Tensor,
    x_target: &Tensor,
    baseline: &Tensor,
    config: &AttackConfig,
    gammas: &[f64],
) -> Result<AttackResult> {
    if gammas.is_empty() {
        return Err(Error::InvalidArgument("empty gamma grid".into()));
    }
    let mut runs = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let cfg = AttackConfig { gamma, ..config.clone() };
        runs.push(targeted_attack(clf, x, x_target, baseline, &cfg)?);
    }
    let any_preserved = runs.iter().any(|r| r.class_preserved);
    let best = runs
        .into_iter()
        .filter(|r| r.class_preserved || !any_preserved)
        .min_by(|a, b| a.attribution_distance.total_cmp(&b.attribution_distance))
        .expect("non-empty");
    Ok(best)
}

/// Pushes down the integrated-gradients scores of the `k` features that are
/// largest at the clean input. Steps that would change the predicted class
/// are rejected and the step length is halved.
pub fn topk_attack(clf: &Classifier, x: &Tensor, k: usize, baseline: &Tensor, config: &AttackConfig) -> Result<AttackResult> {
    config.validate()?;
    check_input(clf, x, baseline)?;
    if k == 0 || k > x.numel() {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={}", x.numel())));
    }
    let class = clf.predict(x)?;
    let f = clf.class_logit(class, config.mode())?;
    let clean_attr = integrated_gradients(&f, x, baseline, config.ig_steps, config.rule)?;
    let top = top_k_indices(clean_attr.data(), k);
    let mut mask = vec![0.0; x.numel()];
    for &j in &top {
        mask[j] = 1.0;
    }
    let mask = Tensor::from_parts(x.shape().to_vec(), mask);

    let mut step = config.step();
    let mut current = x.clone();
    let mut history = Vec::with_capacity(config.steps + 1);
    let (mut best, mut best_iterate, mut best_loss) = (x.clone(), 0, f64::INFINITY);
    let (mut loss, mut grad) = topk_objective_and_grad(&f, &current, baseline, &mask, config.ig_steps, config.rule)?;
    for it in 0..=config.steps {
        history.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best = current.clone();
            best_iterate = it;
        }
        if it == config.steps {
            break;
        }
        let moved = sign_step(current.data(), grad.data(), step);
        let candidate = Tensor::from_parts(x.shape().to_vec(), project(&moved, x.data(), config.epsilon));
        if clf.predict(&candidate)? != class {
            step *= 0.5;
            continue;
        }
        current = candidate;
        (loss, grad) = topk_objective_and_grad(&f, &current, baseline, &mask, config.ig_steps, config.rule)?;
    }

    let best_attr = integrated_gradients(&f, &best, baseline, config.ig_steps, config.rule)?;
    let kept = top_k_indices(best_attr.data(), k).iter().filter(|j| top.contains(j)).count();
    let adv_class = clf.predict(&best)?;
    Ok(AttackResult {
        kind: AttackKind::Topk,
        linf: linf(&best, x),
        x_adv: best,
        loss_history: history,
        best_iterate,
        class,
        adv_class,
        class_preserved: adv_class == class,
        gamma: 0.0,
        initial_distance: clean_attr.mul(&mask)?.sum(),
        attribution_distance: best_attr.mul(&mask)?.sum(),
        topk_overlap: Some(kept as f64 / k as f64),
    })
}

/// One row of a robustness table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RobustnessRow {
    pub input_id: String,
    pub method: Method,
    pub ssi: f64,
    pub class_preserved: bool,
}

/// A clean input and its attacked counterpart.
#[derive(Debug, Clone)]
pub struct AttackedInput {
    pub id: String,
    /// `[H, W]` image.
    pub x: Tensor,
    pub x_adv: Tensor,
    pub class_preserved: bool,
}

/// SSIM between normalized maps of the clean and attacked inputs for every
/// method and input. `explain(method, image)` returns a `[H, W]` map.
pub fn evaluate_robustness<E>(
    methods: &[Method],
    cases: &[AttackedInput],
    explain: E,
    config: &MetricConfig,
) -> Result<Vec<RobustnessRow>>
where
    E: Fn(Method, &Tensor) -> Result<Tensor>,
{
    let mut rows = Vec::with_capacity(methods.len() * cases.len());
    for case in cases {
        for &method in methods {
            let clean = normalize_map(&explain(method, &case.x)?);
            let attacked = normalize_map(&explain(method, &case.x_adv)?);
            rows.push(RobustnessRow {
                input_id: case.id.clone(),
                method,
                ssi: ssim(&clean, &attacked, config)?,
                class_preserved: case.class_preserved,
            });
        }
    }
    Ok(rows)
}
