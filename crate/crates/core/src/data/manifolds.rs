//! Closed-form smooth maps used as oracle decoders.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::models::Generator;
use crate::tensor::Tensor;

fn unit(n: usize, j: usize, column: bool) -> Tensor {
    let mut data = vec![0.0; n];
    data[j] = 1.0;
    let shape = if column { vec![n, 1] } else { vec![1, n] };
    Tensor::from_parts(shape, data)
}

/// Column `j` of a row batch `z: [n, d]`, as `[n, 1]`.
fn column<'g>(z: Var<'g>, j: usize) -> Result<Var<'g>> {
    let d = z.shape()[1];
    z.matmul(z.graph().leaf(unit(d, j, true)))
}

/// Assembles `[n, cols.len()]` from `[n, 1]` columns.
fn assemble<'g>(g: &'g Graph, cols: &[Var<'g>]) -> Result<Var<'g>> {
    let width = cols.len();
    let mut out = cols[0].matmul(g.leaf(unit(width, 0, false)))?;
    for (j, c) in cols.iter().enumerate().skip(1) {
        out = out.add(c.matmul(g.leaf(unit(width, j, false)))?)?;
    }
    Ok(out)
}

fn check_latent(z: &Var<'_>, d: usize) -> Result<()> {
    let shape = z.shape();
    if shape.len() != 2 || shape[1] != d {
        return Err(Error::shape("decoder", &shape, &[d]));
    }
    Ok(())
}

/// `g(z) = z`.
#[derive(Debug, Clone, Copy)]
pub struct IdentityDecoder {
    pub dim: usize,
}

impl Generator for IdentityDecoder {
    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn data_dim(&self) -> usize {
        self.dim
    }

    fn generate<'g>(&self, _g: &'g Graph, z: Var<'g>) -> Result<Var<'g>> {
        check_latent(&z, self.dim)?;
        Ok(z)
    }
}

/// `g(z) = A z` with `A: [D, d]`.
#[derive(Debug, Clone)]
pub struct LinearDecoder {
    matrix: Tensor,
    transposed: Tensor,
}

impl LinearDecoder {
    pub fn new(matrix: Tensor) -> Result<Self> {
        let transposed = matrix.transpose()?;
        Ok(LinearDecoder { matrix, transposed })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    /// `AᵀA`.
    pub fn metric(&self) -> Tensor {
        self.transposed.matmul(&self.matrix).expect("shapes agree by construction")
    }
}

impl Generator for LinearDecoder {
    fn latent_dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    fn data_dim(&self) -> usize {
        self.matrix.shape()[0]
    }

    fn generate<'g>(&self, g: &'g Graph, z: Var<'g>) -> Result<Var<'g>> {
        check_latent(&z, self.latent_dim())?;
        z.matmul(g.leaf(self.transposed.clone()))
    }
}

/// Unit-sphere chart `(θ, φ) -> (sinθ cosφ, sinθ sinφ, cosθ)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SphereDecoder;

impl SphereDecoder {
    pub fn point(theta: f64, phi: f64) -> [f64; 3] {
        [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
    }

    /// Round-sphere metric `diag(1, sin²θ)`.
    pub fn metric(theta: f64) -> Tensor {
        Tensor::from_parts(vec![2, 2], vec![1.0, 0.0, 0.0, theta.sin().powi(2)])
    }

    /// Great-circle distance between two chart points.
    pub fn great_circle(a: [f64; 2], b: [f64; 2]) -> f64 {
        let (p, q) = (Self::point(a[0], a[1]), Self::point(b[0], b[1]));
        let cos = p.iter().zip(&q).map(|(x, y)| x * y).sum::<f64>();
        cos.clamp(-1.0, 1.0).acos()
    }
}

impl Generator for SphereDecoder {
    fn latent_dim(&self) -> usize {
        2
    }

    fn data_dim(&self) -> usize {
        3
    }

    fn generate<'g>(&self, g: &'g Graph, z: Var<'g>) -> Result<Var<'g>> {
        check_latent(&z, 2)?;
        let theta = column(z, 0)?;
        let phi = column(z, 1)?;
        let st = theta.sin();
        assemble(g, &[st.mul(phi.cos())?, st.mul(phi.sin())?, theta.cos()])
    }
}

/// Swiss roll `(t, h) -> (t cos t, h, t sin t)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SwissRollDecoder;

impl SwissRollDecoder {
    /// `diag(1 + t², 1)`.
    pub fn metric(t: f64) -> Tensor {
        Tensor::from_parts(vec![2, 2], vec![1.0 + t * t, 0.0, 0.0, 1.0])
    }
}

impl Generator for SwissRollDecoder {
    fn latent_dim(&self) -> usize {
        2
    }

    fn data_dim(&self) -> usize {
        3
    }

    fn generate<'g>(&self, g: &'g Graph, z: Var<'g>) -> Result<Var<'g>> {
        check_latent(&z, 2)?;
        let t = column(z, 0)?;
        let h = column(z, 1)?;
        assemble(g, &[t.mul(t.cos())?, h, t.mul(t.sin())?])
    }
}
