use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::layers::{Activation, ActivationMode, Dense, Mlp};
use super::{Encoder, Generator};
use crate::autodiff::{Graph, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

/// Layer widths of a VAE. The encoder runs `data_dim -> hidden... -> latent`
/// and the decoder mirrors it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VaeArch {
    pub data_dim: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
}

impl VaeArch {
    pub fn new(data_dim: usize, latent_dim: usize, hidden: Vec<usize>) -> Result<Self> {
        if latent_dim == 0 || latent_dim > data_dim || hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "latent dimension {latent_dim} must be in 1..={data_dim}"
            )));
        }
        Ok(VaeArch {
            data_dim,
            latent_dim,
            hidden,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub kl_weight: f64,
    pub feature_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            kl_weight: 1e-3,
            feature_weight: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.learning_rate, self.kl_weight, self.feature_weight];
        if self.batch_size == 0 || finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            kl: self.kl_weight,
            feature: self.feature_weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub kl: f64,
    pub feature: f64,
}

/// Fixed random features `tanh(x P)` used by the feature-matching loss term.
#[derive(Debug, Clone)]
pub struct FeatureProjection {
    projection: Arc<Tensor>,
}

impl FeatureProjection {
    pub const FEATURES: usize = 64;

    pub fn new(data_dim: usize, seed: u64) -> Self {
        let mut rng = Rng::new(derive_seed(seed, 0xfea7));
        let std = (1.0 / data_dim as f64).sqrt() * 4.0;
        let data = rng.normals(data_dim * Self::FEATURES, std);
        FeatureProjection {
            projection: Arc::new(Tensor::from_parts(vec![data_dim, Self::FEATURES], data)),
        }
    }

    fn features<'g>(&self, x: Var<'g>) -> Result<Var<'g>> {
        let p = x.graph().leaf_shared(Arc::clone(&self.projection));
        Ok(x.matmul(p)?.tanh())
    }
}

/// Encoder statistics and decoded reconstruction for a batch.
#[derive(Debug, Clone)]
pub struct VaeOutput {
    pub mu: Tensor,
    pub logvar: Tensor,
    pub reconstruction: Tensor,
}

/// `KL(N(mu, exp(logvar)) || N(0, I))` summed over latent dimensions and
/// averaged over rows.
pub fn kl_divergence<'g>(mu: Var<'g>, logvar: Var<'g>) -> Result<Var<'g>> {
    let rows = mu.shape()[0] as f64;
    let per_elem = logvar.add_scalar(1.0).sub(mu.square())?.sub(logvar.exp())?;
    Ok(per_elem.sum().scale(-0.5 / rows))
}

fn loss_var<'g>(
    x: Var<'g>,
    mu: Var<'g>,
    logvar: Var<'g>,
    recon: Var<'g>,
    weights: LossWeights,
    features: &FeatureProjection,
) -> Result<Var<'g>> {
    let mut loss = recon.sub(x)?.square().mean();
    if weights.kl != 0.0 {
        loss = loss.add(kl_divergence(mu, logvar)?.scale(weights.kl))?;
    }
    if weights.feature != 0.0 {
        let diff = features.features(recon)?.sub(features.features(x)?)?;
        loss = loss.add(diff.square().mean().scale(weights.feature))?;
    }
    Ok(loss)
}

/// Reconstruction MSE plus weighted KL and feature-matching terms.
pub fn vae_loss(x: &Tensor, out: &VaeOutput, weights: LossWeights, features: &FeatureProjection) -> Result<f64> {
    if weights.kl < 0.0 || weights.feature < 0.0 {
        return Err(Error::InvalidArgument(format!("negative loss weights {weights:?}")));
    }
    let g = Graph::new();
    let loss = loss_var(
        g.leaf(x.clone()),
        g.leaf(out.mu.clone()),
        g.leaf(out.logvar.clone()),
        g.leaf(out.reconstruction.clone()),
        weights,
        features,
    )?;
    Ok(loss.value().item())
}

/// Variational autoencoder with a smooth decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    pub(crate) encoder: Mlp,
    pub(crate) mu_head: Mlp,
    pub(crate) logvar_head: Mlp,
    pub(crate) decoder: Mlp,
    trained: bool,
}

impl Vae {
    /// SiLU encoder, ELU decoder with a tanh output layer.
    pub fn init(arch: &VaeArch, seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let mut enc_sizes = vec![arch.data_dim];
        enc_sizes.extend(&arch.hidden);
        let enc_acts = vec![Activation::Silu; arch.hidden.len()];
        let trunk_out = *enc_sizes.last().unwrap();
        let encoder = if arch.hidden.is_empty() {
            // identity trunk keeps the structure uniform
            Mlp::new(vec![Dense::new(
                Tensor::eye(arch.data_dim),
                Tensor::zeros(&[1, arch.data_dim]),
                Activation::Identity,
            )?])?
        } else {
            Mlp::init(&enc_sizes, &enc_acts, &mut rng)?
        };
        let mu_head = Mlp::init(&[trunk_out, arch.latent_dim], &[Activation::Identity], &mut rng)?;
        let mut logvar_head = Mlp::init(&[trunk_out, arch.latent_dim], &[Activation::Identity], &mut rng)?;
        // start with small posterior variances
        logvar_head = logvar_head.with_params(
            logvar_head
                .params()
                .into_iter()
                .map(|p| Arc::new(p.scale(0.1)))
                .collect(),
        )?;
        let mut dec_sizes = vec![arch.latent_dim];
        dec_sizes.extend(arch.hidden.iter().rev());
        dec_sizes.push(arch.data_dim);
        let mut dec_acts = vec![Activation::Elu; arch.hidden.len()];
        dec_acts.push(Activation::Tanh);
        let decoder = Mlp::init(&dec_sizes, &dec_acts, &mut rng)?;
        Vae::from_parts(encoder, mu_head, logvar_head, decoder, false)
    }

    pub fn from_parts(encoder: Mlp, mu_head: Mlp, logvar_head: Mlp, decoder: Mlp, trained: bool) -> Result<Self> {
        if !decoder.is_smooth() {
            return Err(Error::InvalidArgument("decoder activations must be smooth".into()));
        }
        let latent = mu_head.output_dim();
        if logvar_head.output_dim() != latent
            || decoder.input_dim() != latent
            || mu_head.input_dim() != encoder.output_dim()
            || logvar_head.input_dim() != encoder.output_dim()
            || decoder.output_dim() != encoder.input_dim()
        {
            return Err(Error::InvalidArgument("inconsistent VAE component shapes".into()));
        }
        if latent > decoder.output_dim() {
            return Err(Error::InvalidArgument("latent dimension exceeds data dimension".into()));
        }
        Ok(Vae {
            encoder,
            mu_head,
            logvar_head,
            decoder,
            trained,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    /// Marks weights as final, e.g. for hand-built or loaded networks.
    pub fn into_trained(mut self) -> Self {
        self.trained = true;
        self
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn components(&self) -> [(&'static str, &Mlp); 4] {
        [
            ("encoder", &self.encoder),
            ("mu", &self.mu_head),
            ("logvar", &self.logvar_head),
            ("decoder", &self.decoder),
        ]
    }

    fn ensure_trained(&self) -> Result<()> {
        if self.trained {
            Ok(())
        } else {
            Err(Error::NotTrained("VAE".into()))
        }
    }

    /// Posterior mean `mu(x)` of a single input (any shape with `data_dim` elements).
    pub fn encode_mean(&self, x: &Tensor) -> Result<Tensor> {
        self.ensure_trained()?;
        if x.numel() != self.data_dim() {
            return Err(Error::shape("encode_mean", x.shape(), &[self.data_dim()]));
        }
        let z = super::encode_batch(self, &super::as_row(x))?;
        z.reshape(&[self.latent_dim()])
    }

    /// `g(z)` for a single latent vector, as a flat `[data_dim]` tensor.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.ensure_trained()?;
        if z.numel() != self.latent_dim() {
            return Err(Error::shape("decode", z.shape(), &[self.latent_dim()]));
        }
        let x = super::decode_batch(self, &super::as_row(z))?;
        x.reshape(&[self.data_dim()])
    }

    /// `decode(encode_mean(x))` for each row of `x`.
    pub fn reconstruct_batch(&self, x: &Tensor) -> Result<Tensor> {
        self.ensure_trained()?;
        let z = super::encode_batch(self, x)?;
        super::decode_batch(self, &z)
    }

    /// Deterministic forward pass (no sampling) over a batch.
    pub fn forward(&self, x: &Tensor) -> Result<VaeOutput> {
        let g = Graph::new();
        let xv = g.leaf(x.clone());
        let h = self.encoder.forward(&g, xv, ActivationMode::Native)?;
        let mu = self.mu_head.forward(&g, h, ActivationMode::Native)?;
        let logvar = self.logvar_head.forward(&g, h, ActivationMode::Native)?;
        let recon = self.decoder.forward(&g, mu, ActivationMode::Native)?;
        Ok(VaeOutput {
            mu: (*mu.value()).clone(),
            logvar: (*logvar.value()).clone(),
            reconstruction: (*recon.value()).clone(),
        })
    }

    /// Minibatch training loss with the reparameterized sample
    /// `z = mu + exp(logvar / 2) ⊙ noise`, as a function of the parameters in
    /// [`Vae::all_params`] order.
    pub fn training_loss<'g>(
        &self,
        params: &[Var<'g>],
        x: Var<'g>,
        noise: &Tensor,
        weights: LossWeights,
        features: &FeatureProjection,
    ) -> Result<Var<'g>> {
        let g = x.graph();
        let (enc_p, rest) = params.split_at(self.encoder.params().len());
        let (mu_p, rest) = rest.split_at(self.mu_head.params().len());
        let (lv_p, dec_p) = rest.split_at(self.logvar_head.params().len());
        let h = self.encoder.forward_with(x, enc_p, ActivationMode::Native)?;
        let mu = self.mu_head.forward_with(h, mu_p, ActivationMode::Native)?;
        let logvar = self.logvar_head.forward_with(h, lv_p, ActivationMode::Native)?;
        let z = mu.add(logvar.scale(0.5).exp().mul(g.leaf(noise.clone()))?)?;
        let recon = self.decoder.forward_with(z, dec_p, ActivationMode::Native)?;
        loss_var(x, mu, logvar, recon, weights, features)
    }

    /// Parameters of the encoder, both heads and the decoder, in that order.
    pub fn all_params(&self) -> Vec<Arc<Tensor>> {
        self.components().iter().flat_map(|(_, net)| net.params()).collect()
    }

    fn with_all_params(&self, params: Vec<Arc<Tensor>>) -> Result<Self> {
        let mut it = params.into_iter();
        let mut take = |net: &Mlp| net.with_params(it.by_ref().take(net.params().len()).collect());
        Ok(Vae {
            encoder: take(&self.encoder)?,
            mu_head: take(&self.mu_head)?,
            logvar_head: take(&self.logvar_head)?,
            decoder: take(&self.decoder)?,
            trained: self.trained,
        })
    }
}

impl Generator for Vae {
    fn latent_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    fn data_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    fn generate<'g>(&self, g: &'g Graph, z: Var<'g>) -> Result<Var<'g>> {
        self.decoder.forward(g, z, ActivationMode::Native)
    }
}

impl Encoder for Vae {
    fn latent_dim(&self) -> usize {
        self.mu_head.output_dim()
    }

    fn data_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    fn encode<'g>(&self, g: &'g Graph, x: Var<'g>) -> Result<Var<'g>> {
        let h = self.encoder.forward(g, x, ActivationMode::Native)?;
        self.mu_head.forward(g, h, ActivationMode::Native)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainReport {
    /// Mean minibatch loss per epoch.
    pub loss_history: Vec<f64>,
    /// Exponential moving average of `loss_history`.
    pub smoothed_history: Vec<f64>,
}

impl TrainReport {
    pub(crate) fn from_history(loss_history: Vec<f64>) -> Self {
        let mut smoothed = Vec::with_capacity(loss_history.len());
        let mut ema = None;
        for &l in &loss_history {
            let next = match ema {
                None => l,
                Some(prev) => 0.7 * prev + 0.3 * l,
            };
            ema = Some(next);
            smoothed.push(next);
        }
        TrainReport {
            loss_history,
            smoothed_history: smoothed,
        }
    }
}

/// Trains a VAE with Adam on every row of `data` (baseline images included).
pub fn train_vae(data: &Dataset, arch: &VaeArch, config: &TrainConfig) -> Result<(Vae, TrainReport)> {
    config.validate()?;
    if arch.data_dim != data.dim() {
        return Err(Error::shape("train_vae", &[arch.data_dim], &[data.dim()]));
    }
    let mut vae = Vae::init(arch, derive_seed(config.seed, 1))?;
    let features = FeatureProjection::new(arch.data_dim, config.seed);
    let mut params = vae.all_params();
    let mut adam = Adam::new(config.learning_rate, &params);
    let mut rng = Rng::new(derive_seed(config.seed, 2));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let x = data.rows(batch);
            let noise = Tensor::from_parts(vec![batch.len(), arch.latent_dim], rng.normals(batch.len() * arch.latent_dim, 1.0));
            let g = Graph::new();
            let pvars: Vec<Var> = params.iter().map(|p| g.leaf_shared(Arc::clone(p))).collect();
            let loss = vae.training_loss(&pvars, g.leaf(x), &noise, config.weights(), &features)?;
            let value = loss.value().item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, value });
            }
            let grads: Vec<Arc<Tensor>> = g.grad(loss, &pvars)?.iter().map(|v| v.value()).collect();
            drop(g);
            params = adam.update(&params, &grads);
            total += value;
            batches += 1;
        }
        history.push(total / batches.max(1) as f64);
        vae = vae.with_all_params(params.clone())?;
    }
    vae.trained = true;
    Ok((vae, TrainReport::from_history(history)))
}
