use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Elu,
    Tanh,
    Softplus,
    Silu,
    Sigmoid,
}

impl Activation {
    /// Smooth activations admit derivatives of every order.
    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }

    fn init_gain(self) -> f64 {
        match self {
            Activation::Relu | Activation::Elu | Activation::Silu | Activation::Softplus => 2.0,
            _ => 1.0,
        }
    }
}

/// How ReLU layers are evaluated. Weights are never touched by a mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum ActivationMode {
    Native,
    /// ReLU replaced by `softplus(beta x) / beta`.
    SoftplusSwap { beta: f64 },
    /// ReLU whose backward pass keeps only non-negative upstream gradients.
    GuidedBackprop,
}

impl Default for ActivationMode {
    fn default() -> Self {
        ActivationMode::Native
    }
}

pub(crate) fn activate<'g>(x: Var<'g>, activation: Activation, mode: ActivationMode) -> Var<'g> {
    match activation {
        Activation::Identity => x,
        Activation::Relu => match mode {
            ActivationMode::Native => x.relu(),
            ActivationMode::SoftplusSwap { beta } => x.softplus_beta(beta),
            ActivationMode::GuidedBackprop => x.guided_relu(),
        },
        Activation::Elu => x.elu(),
        Activation::Tanh => x.tanh(),
        Activation::Softplus => x.softplus(),
        Activation::Silu => x.silu(),
        Activation::Sigmoid => x.sigmoid(),
    }
}

/// Affine map followed by an activation: `act(x W + b)` for row-batched `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Arc<Tensor>,
    pub bias: Arc<Tensor>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let (inputs, outputs) = weight.dims2("dense")?;
        if bias.shape() != [1, outputs] {
            return Err(Error::shape("dense", weight.shape(), bias.shape()));
        }
        debug_assert!(inputs > 0);
        Ok(Dense {
            weight: Arc::new(weight),
            bias: Arc::new(bias),
            activation,
        })
    }

    /// Gaussian fan-in initialization with zero bias.
    pub fn init(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let std = (activation.init_gain() / inputs as f64).sqrt();
        let weight = Tensor::from_parts(vec![inputs, outputs], rng.normals(inputs * outputs, std));
        let bias = Tensor::zeros(&[1, outputs]);
        Dense {
            weight: Arc::new(weight),
            bias: Arc::new(bias),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    fn apply<'g>(&self, x: Var<'g>, weight: Var<'g>, bias: Var<'g>, mode: ActivationMode) -> Result<Var<'g>> {
        let rows = x.shape()[0];
        let pre = x.matmul(weight)?.add(bias.repeat_rows(rows)?)?;
        Ok(activate(pre, self.activation, mode))
    }
}

/// Stack of [`Dense`] layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::shape("mlp", pair[0].weight.shape(), pair[1].weight.shape()));
            }
        }
        Ok(Mlp { layers })
    }

    /// Randomly initialized network with layer widths `sizes` and one
    /// activation per layer.
    pub fn init(sizes: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if sizes.len() != activations.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} widths need {} activations, got {}",
                sizes.len(),
                sizes.len().saturating_sub(1),
                activations.len()
            )));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Dense::init(w[0], w[1], act, rng))
            .collect();
        Mlp::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn is_smooth(&self) -> bool {
        self.layers.iter().all(|l| l.activation.is_smooth())
    }

    /// Parameters in layer order: weight then bias.
    pub fn params(&self) -> Vec<Arc<Tensor>> {
        self.layers
            .iter()
            .flat_map(|l| [Arc::clone(&l.weight), Arc::clone(&l.bias)])
            .collect()
    }

    /// Copy of this network with replaced parameters (same order as [`Mlp::params`]).
    pub fn with_params(&self, params: Vec<Arc<Tensor>>) -> Result<Self> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::InvalidArgument("parameter count mismatch".into()));
        }
        let mut it = params.into_iter();
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (w, b) = (it.next().unwrap(), it.next().unwrap());
            if w.shape() != l.weight.shape() || b.shape() != l.bias.shape() {
                return Err(Error::shape("with_params", l.weight.shape(), w.shape()));
            }
            layers.push(Dense {
                weight: w,
                bias: b,
                activation: l.activation,
            });
        }
        Ok(Mlp { layers })
    }

    /// Records the network's parameters on `g` (shared, not copied).
    pub fn param_vars<'g>(&self, g: &'g Graph) -> Vec<Var<'g>> {
        self.params().into_iter().map(|p| g.leaf_shared(p)).collect()
    }

    /// Forward pass over a row batch `x: [n, input_dim]`.
    pub fn forward<'g>(&self, g: &'g Graph, x: Var<'g>, mode: ActivationMode) -> Result<Var<'g>> {
        let params = self.param_vars(g);
        self.forward_with(x, &params, mode)
    }

    /// Forward pass using externally recorded parameters, for training.
    pub fn forward_with<'g>(&self, x: Var<'g>, params: &[Var<'g>], mode: ActivationMode) -> Result<Var<'g>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(Error::shape("mlp", &shape, &[self.input_dim()]));
        }
        let mut h = x;
        for (layer, p) in self.layers.iter().zip(params.chunks(2)) {
            h = layer.apply(h, p[0], p[1], mode)?;
        }
        Ok(h)
    }

    pub fn forward_tensor(&self, x: &Tensor, mode: ActivationMode) -> Result<Tensor> {
        let g = Graph::new();
        let xv = g.leaf(x.clone());
        Ok((*self.forward(&g, xv, mode)?.value()).clone())
    }
}

/// Views a single input (any shape) as a one-row batch.
pub fn as_row(x: &Tensor) -> Tensor {
    Tensor::from_parts(vec![1, x.numel()], x.data().to_vec())
}
