use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::layers::{as_row, Activation, ActivationMode, Mlp};
use super::vae::{TrainConfig, TrainReport};
use super::Scorer;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassifierArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
}

/// ReLU network mapping data space to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub(crate) net: Mlp,
    trained: bool,
}

impl Classifier {
    pub fn init(arch: &ClassifierArch, seed: u64) -> Result<Self> {
        if arch.num_classes < 2 {
            return Err(Error::InvalidArgument("classifier needs at least two classes".into()));
        }
        let mut sizes = vec![arch.input_dim];
        sizes.extend(&arch.hidden);
        sizes.push(arch.num_classes);
        let mut acts = vec![Activation::Relu; arch.hidden.len()];
        acts.push(Activation::Identity);
        let net = Mlp::init(&sizes, &acts, &mut Rng::new(seed))?;
        Ok(Classifier { net, trained: false })
    }

    pub fn from_net(net: Mlp, trained: bool) -> Result<Self> {
        if net.output_dim() < 2 {
            return Err(Error::InvalidArgument("classifier needs at least two classes".into()));
        }
        Ok(Classifier { net, trained })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn num_classes(&self) -> usize {
        self.net.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Logits `[n, num_classes]` for a row batch.
    pub fn logits_batch(&self, x: &Tensor, mode: ActivationMode) -> Result<Tensor> {
        self.net.forward_tensor(x, mode)
    }

    /// Logits `[num_classes]` for a single input.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let out = self.logits_batch(&as_row(x), ActivationMode::Native)?;
        out.reshape(&[self.num_classes()])
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.logits(x)?.argmax())
    }

    pub fn predict_batch(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits_batch(x, ActivationMode::Native)?;
        Ok((0..logits.shape()[0]).map(|i| Tensor::vector(logits.row(i).to_vec()).argmax()).collect())
    }

    /// `F` for attribution: the logit of `class` evaluated in `mode`.
    pub fn class_logit(&self, class: usize, mode: ActivationMode) -> Result<ClassLogit<'_>> {
        if class >= self.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "class {class} out of range for {} classes",
                self.num_classes()
            )));
        }
        Ok(ClassLogit {
            classifier: self,
            class,
            mode,
        })
    }

    /// Gradient of the `class` logit with respect to the input, in the input's shape.
    pub fn classify_grad(&self, x: &Tensor, class: usize, mode: ActivationMode) -> Result<Tensor> {
        super::grad_one(&self.class_logit(class, mode)?, x)
    }
}

/// Pre-softmax logit of one class.
#[derive(Debug, Clone, Copy)]
pub struct ClassLogit<'a> {
    pub classifier: &'a Classifier,
    pub class: usize,
    pub mode: ActivationMode,
}

impl Scorer for ClassLogit<'_> {
    fn input_dim(&self) -> usize {
        self.classifier.input_dim()
    }

    fn score<'g>(&self, g: &'g Graph, x: Var<'g>) -> Result<Var<'g>> {
        let logits = self.classifier.net.forward(g, x, self.mode)?;
        let mut onehot = vec![0.0; self.classifier.num_classes()];
        onehot[self.class] = 1.0;
        let pick = g.leaf(Tensor::new(vec![onehot.len(), 1], onehot)?);
        logits.matmul(pick)
    }
}

/// Mean softmax cross-entropy of `logits: [n, c]` against one-hot `targets`.
pub fn cross_entropy<'g>(logits: Var<'g>, targets: &Tensor) -> Result<Var<'g>> {
    let g = logits.graph();
    let lv = logits.value();
    let (n, c) = lv.dims2("cross_entropy")?;
    // row maxima are constants; the loss is invariant to the shift
    let shift: Vec<f64> = (0..n)
        .flat_map(|i| {
            let m = lv.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            std::iter::repeat(m).take(c)
        })
        .collect();
    let shifted = logits.sub(g.leaf(Tensor::new(vec![n, c], shift)?))?;
    let ones = g.leaf(Tensor::ones(&[c, 1]));
    let log_norm = shifted.exp().matmul(ones)?.log();
    let picked = shifted.mul(g.leaf(targets.clone()))?.matmul(ones)?;
    Ok(log_norm.sub(picked)?.mean())
}

/// Trains a classifier with Adam on `inputs: [n, D]` against `labels`.
pub fn train_classifier(
    inputs: &Tensor,
    labels: &[usize],
    arch: &ClassifierArch,
    config: &TrainConfig,
) -> Result<(Classifier, TrainReport)> {
    config.validate()?;
    let (n, dim) = inputs.dims2("train_classifier")?;
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!("{} labels for {n} inputs", labels.len())));
    }
    if dim != arch.input_dim {
        return Err(Error::shape("train_classifier", &[dim], &[arch.input_dim]));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= arch.num_classes) {
        return Err(Error::InvalidArgument(format!("label {bad} >= {} classes", arch.num_classes)));
    }
    // train on per-feature centered inputs, then fold the centering into the
    // first bias so the returned network takes raw inputs
    let mut center = vec![0.0; dim];
    for i in 0..n {
        for (c, v) in center.iter_mut().zip(inputs.row(i)) {
            *c += v / n as f64;
        }
    }
    let mut clf = Classifier::init(arch, derive_seed(config.seed, 11))?;
    let mut params = clf.net.params();
    let mut adam = Adam::new(config.learning_rate, &params);
    let mut rng = Rng::new(derive_seed(config.seed, 12));
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let mut x = Vec::with_capacity(batch.len() * dim);
            let mut t = vec![0.0; batch.len() * arch.num_classes];
            for (r, &i) in batch.iter().enumerate() {
                x.extend(inputs.row(i).iter().zip(&center).map(|(v, c)| v - c));
                t[r * arch.num_classes + labels[i]] = 1.0;
            }
            let g = Graph::new();
            let pvars: Vec<Var> = params.iter().map(|p| g.leaf_shared(Arc::clone(p))).collect();
            let xv = g.leaf(Tensor::new(vec![batch.len(), dim], x)?);
            let logits = clf.net.forward_with(xv, &pvars, ActivationMode::Native)?;
            let loss = cross_entropy(logits, &Tensor::new(vec![batch.len(), arch.num_classes], t)?)?;
            let value = loss.value().item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, value });
            }
            let grads: Vec<Arc<Tensor>> = g.grad(loss, &pvars)?.iter().map(|v| v.value()).collect();
            params = adam.update(&params, &grads);
            total += value;
            batches += 1;
        }
        history.push(total / batches.max(1) as f64);
    }
    let shift = Tensor::new(vec![1, dim], center)?.matmul(&params[0])?;
    params[1] = Arc::new(params[1].sub(&shift)?);
    clf.net = clf.net.with_params(params)?;
    clf.trained = true;
    Ok((clf, TrainReport::from_history(history)))
}

/// Fraction of rows of `inputs` whose prediction equals the label.
pub fn accuracy(clf: &Classifier, inputs: &Tensor, labels: &[usize]) -> Result<f64> {
    let pred = clf.predict_batch(inputs)?;
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}
