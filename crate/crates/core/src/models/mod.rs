//! Encoders, decoders and classifiers, with their training loops.
//!
//! Three traits decouple the geometric and attribution code from concrete
//! networks: [`Generator`] (a smooth decoder `g: R^d -> R^D`), [`Encoder`],
//! and [`Scorer`] (the scalar function `F` being explained). All of them work
//! on row batches.

mod adam;
mod classifier;
pub mod file;
mod layers;
mod vae;

pub use adam::Adam;
pub use classifier::{accuracy, cross_entropy, train_classifier, ClassLogit, Classifier, ClassifierArch};
pub use layers::{as_row, Activation, ActivationMode, Dense, Mlp};
pub use vae::{
    kl_divergence, train_vae, vae_loss, FeatureProjection, LossWeights, TrainConfig, TrainReport, Vae, VaeArch,
    VaeOutput,
};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smooth map from latent space to data space.
pub trait Generator: Sync {
    fn latent_dim(&self) -> usize;
    fn data_dim(&self) -> usize;
    /// Maps `z: [n, latent_dim]` to `[n, data_dim]`.
    fn generate<'g>(&self, g: &'g Graph, z: Var<'g>) -> Result<Var<'g>>;
}

/// Map from data space to latent space.
pub trait Encoder: Sync {
    fn latent_dim(&self) -> usize;
    fn data_dim(&self) -> usize;
    /// Maps `x: [n, data_dim]` to `[n, latent_dim]`.
    fn encode<'g>(&self, g: &'g Graph, x: Var<'g>) -> Result<Var<'g>>;
}

/// Scalar model output `F` explained by the attribution methods.
pub trait Scorer: Sync {
    fn input_dim(&self) -> usize;
    /// Maps `x: [n, input_dim]` to `[n, 1]`.
    fn score<'g>(&self, g: &'g Graph, x: Var<'g>) -> Result<Var<'g>>;
}

fn check_rows(x: &Tensor, cols: usize, op: &'static str) -> Result<usize> {
    match x.shape() {
        [n, c] if *c == cols => Ok(*n),
        other => Err(Error::shape(op, other, &[cols])),
    }
}

/// Decodes a batch of latent rows.
pub fn decode_batch(generator: &dyn Generator, z: &Tensor) -> Result<Tensor> {
    check_rows(z, generator.latent_dim(), "decode")?;
    let g = Graph::new();
    let zv = g.leaf(z.clone());
    Ok((*generator.generate(&g, zv)?.value()).clone())
}

/// Encodes a batch of data rows.
pub fn encode_batch(encoder: &dyn Encoder, x: &Tensor) -> Result<Tensor> {
    check_rows(x, encoder.data_dim(), "encode")?;
    let g = Graph::new();
    let xv = g.leaf(x.clone());
    Ok((*encoder.encode(&g, xv)?.value()).clone())
}

/// `F` at every row of `x`.
pub fn score_batch(scorer: &dyn Scorer, x: &Tensor) -> Result<Vec<f64>> {
    check_rows(x, scorer.input_dim(), "score")?;
    let g = Graph::new();
    let xv = g.leaf(x.clone());
    Ok(scorer.score(&g, xv)?.value().data().to_vec())
}

/// `F` and `∇F` at every row of `x`. Rows are independent, so one backward
/// pass of the summed scores yields every per-row gradient.
pub fn score_and_grad_batch(scorer: &dyn Scorer, x: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    check_rows(x, scorer.input_dim(), "score")?;
    let g = Graph::new();
    let xv = g.leaf(x.clone());
    let scores = scorer.score(&g, xv)?;
    let values = scores.value().data().to_vec();
    let grad = g.grad(scores.sum(), &[xv])?[0];
    Ok((values, (*grad.value()).clone()))
}

/// `F(x)` for a single input of any shape.
pub fn score_one(scorer: &dyn Scorer, x: &Tensor) -> Result<f64> {
    Ok(score_batch(scorer, &as_row(x))?[0])
}

/// `∇F(x)` for a single input, in the input's shape.
pub fn grad_one(scorer: &dyn Scorer, x: &Tensor) -> Result<Tensor> {
    let (_, grad) = score_and_grad_batch(scorer, &as_row(x))?;
    grad.reshape(x.shape())
}

/// `F(x) = wᵀx + b`.
#[derive(Debug, Clone)]
pub struct LinearScorer {
    pub weight: Tensor,
    pub bias: f64,
}

impl LinearScorer {
    pub fn new(weight: Tensor, bias: f64) -> Self {
        LinearScorer { weight, bias }
    }
}

impl Scorer for LinearScorer {
    fn input_dim(&self) -> usize {
        self.weight.numel()
    }

    fn score<'g>(&self, g: &'g Graph, x: Var<'g>) -> Result<Var<'g>> {
        let column = g.leaf(self.weight.reshape(&[self.weight.numel(), 1])?);
        Ok(x.matmul(column)?.add_scalar(self.bias))
    }
}

/// Any smooth network with a single output unit, used as `F` directly.
#[derive(Debug, Clone)]
pub struct MlpScorer {
    pub net: Mlp,
    pub mode: ActivationMode,
}

impl Scorer for MlpScorer {
    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn score<'g>(&self, g: &'g Graph, x: Var<'g>) -> Result<Var<'g>> {
        self.net.forward(g, x, self.mode)
    }
}

/// Decoder given by a network.
impl Generator for Mlp {
    fn latent_dim(&self) -> usize {
        self.input_dim()
    }

    fn data_dim(&self) -> usize {
        self.output_dim()
    }

    fn generate<'g>(&self, g: &'g Graph, z: Var<'g>) -> Result<Var<'g>> {
        self.forward(g, z, ActivationMode::Native)
    }
}

impl Encoder for Mlp {
    fn latent_dim(&self) -> usize {
        self.output_dim()
    }

    fn data_dim(&self) -> usize {
        self.input_dim()
    }

    fn encode<'g>(&self, g: &'g Graph, x: Var<'g>) -> Result<Var<'g>> {
        self.forward(g, x, ActivationMode::Native)
    }
}
