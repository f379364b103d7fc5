//! Pullback metric, Christoffel symbols and the geodesic ODE residual.
//! These are validation tools; the solver never uses them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::curve::LatentCurve;
use crate::autodiff::jvp;
use crate::error::{Error, Result};
use crate::models::Generator;
use crate::tensor::Tensor;

fn check_point(z: &Tensor, gen: &dyn Generator) -> Result<usize> {
    let d = gen.latent_dim();
    if z.numel() != d {
        return Err(Error::shape("metric", z.shape(), &[d]));
    }
    Ok(d)
}

/// `J_g(z)ᵀ` as a `[d, D]` tensor: row `k` is `J_g(z) e_k`.
///
/// The `d` directional derivatives come from a single batched JVP over `d`
/// copies of `z`.
pub fn jacobian_transpose(z: &Tensor, gen: &dyn Generator) -> Result<Tensor> {
    let d = check_point(z, gen)?;
    let mut copies = Vec::with_capacity(d * d);
    for _ in 0..d {
        copies.extend_from_slice(z.data());
    }
    let batch = Tensor::from_parts(vec![d, d], copies);
    jvp(&batch, &Tensor::eye(d), |g, zb| gen.generate(g, zb))
}

/// Pullback metric `G = J_gᵀ J_g` at a latent point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEval {
    pub z: Vec<f64>,
    /// Row-major `d × d`.
    pub g: Vec<f64>,
    pub dim: usize,
}

impl MetricEval {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.dim + j]
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.dim, self.dim], self.g.clone())
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.g)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.matrix().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

pub fn metric_tensor(z: &Tensor, gen: &dyn Generator) -> Result<MetricEval> {
    let d = check_point(z, gen)?;
    let jt = jacobian_transpose(z, gen)?;
    let mut g = jt.matmul(&jt.transpose()?)?.into_data();
    // symmetrize away rounding differences between (i, j) and (j, i)
    for i in 0..d {
        for j in i + 1..d {
            let m = 0.5 * (g[i * d + j] + g[j * d + i]);
            g[i * d + j] = m;
            g[j * d + i] = m;
        }
    }
    Ok(MetricEval {
        z: z.data().to_vec(),
        g,
        dim: d,
    })
}

/// `Γ^k_ij` stored densely as `[k][i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Christoffel {
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.dim + i) * self.dim + j]
    }

    /// Largest `|Γ^k_ij - Γ^k_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    worst = worst.max((self.get(k, i, j) - self.get(k, j, i)).abs());
                }
            }
        }
        worst
    }

    /// `Σ_ij Γ^k_ij v^i v^j` for every `k`.
    pub fn contract(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|k| {
                let mut s = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        s += self.get(k, i, j) * v[i] * v[j];
                    }
                }
                s
            })
            .collect()
    }
}

/// Relative eigenvalue floor below which the metric counts as singular.
const SINGULAR_RATIO: f64 = 1e-12;

/// Christoffel symbols of the pullback metric. Metric derivatives are
/// central differences with step `h`.
pub fn christoffel_symbols(z: &Tensor, gen: &dyn Generator, h: f64) -> Result<Christoffel> {
    let d = check_point(z, gen)?;
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("difference step {h} must be positive")));
    }
    let center = metric_tensor(z, gen)?;
    let ev = center.eigenvalues();
    let top = ev[d - 1];
    if !(top > 0.0) || ev[0] <= SINGULAR_RATIO * top {
        return Err(Error::SingularMetric(z.data().to_vec()));
    }
    let inverse = center
        .matrix()
        .try_inverse()
        .ok_or_else(|| Error::SingularMetric(z.data().to_vec()))?;

    // dg[l][i][j] = ∂G_ij / ∂z^l
    let mut dg = vec![0.0; d * d * d];
    for l in 0..d {
        let mut plus = z.data().to_vec();
        let mut minus = z.data().to_vec();
        plus[l] += h;
        minus[l] -= h;
        let gp = metric_tensor(&Tensor::from_parts(vec![d], plus), gen)?;
        let gm = metric_tensor(&Tensor::from_parts(vec![d], minus), gen)?;
        for idx in 0..d * d {
            dg[l * d * d + idx] = (gp.g[idx] - gm.g[idx]) / (2.0 * h);
        }
    }
    let der = |l: usize, i: usize, j: usize| dg[(l * d + i) * d + j];

    let mut data = vec![0.0; d * d * d];
    for k in 0..d {
        for i in 0..d {
            for j in i..d {
                let mut s = 0.0;
                for l in 0..d {
                    s += inverse[(k, l)] * (der(i, j, l) + der(j, i, l) - der(l, i, j));
                }
                data[(k * d + i) * d + j] = 0.5 * s;
                data[(k * d + j) * d + i] = 0.5 * s;
            }
        }
    }
    Ok(Christoffel { dim: d, data })
}

/// RMS over interior points of `‖γ̈ + Γ(γ̇, γ̇)‖`, with central differences
/// in `t` on the grid `t_i = i/T`.
pub fn geodesic_ode_residual(curve: &LatentCurve, gen: &dyn Generator, h: f64) -> Result<f64> {
    let steps = curve.steps();
    if steps < 8 {
        return Err(Error::InvalidArgument(format!("ODE residual needs T >= 8, got T = {steps}")));
    }
    let d = curve.dim();
    let t = steps as f64;
    let p = curve.points();
    let mut total = 0.0;
    for i in 1..steps {
        let (prev, cur, next) = (p.row(i - 1), p.row(i), p.row(i + 1));
        let accel: Vec<f64> = (0..d).map(|k| (next[k] - 2.0 * cur[k] + prev[k]) * t * t).collect();
        let vel: Vec<f64> = (0..d).map(|k| (next[k] - prev[k]) * 0.5 * t).collect();
        let gamma = christoffel_symbols(&curve.point(i), gen, h)?;
        let quad = gamma.contract(&vel);
        total += (0..d).map(|k| (accel[k] + quad[k]).powi(2)).sum::<f64>();
    }
    Ok((total / (steps - 1) as f64).sqrt())
}
