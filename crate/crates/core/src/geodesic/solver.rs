use serde::{Deserialize, Serialize};

use super::curve::{coefficient_of_variation, decode_curve, energy_from_decoded, segment_lengths, LatentCurve};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::models::{Encoder, Generator};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// True `∂E/∂z_i`, one vector-Jacobian product per interior point.
    Exact,
    /// Decoder Jacobian transpose replaced by the encoder Jacobian.
    EncoderApprox,
}

impl std::str::FromStr for GradientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(GradientMode::Exact),
            "encoder-approx" => Ok(GradientMode::EncoderApprox),
            other => Err(Error::InvalidArgument(format!("unknown gradient mode {other}"))),
        }
    }
}

/// Second differences `T (2g_i - g_{i+1} - g_{i-1})` at interior points,
/// padded with zero rows at the endpoints.
fn curvature_cotangent(decoded: &Tensor) -> Tensor {
    let (rows, dim) = (decoded.shape()[0], decoded.shape()[1]);
    let t = (rows - 1) as f64;
    let mut out = vec![0.0; rows * dim];
    for i in 1..rows - 1 {
        let (prev, cur, next) = (decoded.row(i - 1), decoded.row(i), decoded.row(i + 1));
        for k in 0..dim {
            out[i * dim + k] = t * (2.0 * cur[k] - next[k] - prev[k]);
        }
    }
    Tensor::from_parts(vec![rows, dim], out)
}

/// Energy and its gradient with respect to the interior points, `[T-1, d]`.
///
/// In exact mode the result is `∂E/∂z_i = (1/δt) J_g(z_i)ᵀ (2g_i - g_{i+1} - g_{i-1})`.
/// In encoder-approx mode `J_g(z_i)ᵀ` is replaced by `J_e(g(z_i))`, which
/// for a perfect encoder equals `G(z_i)⁻¹ J_g(z_i)ᵀ`.
pub fn energy_and_gradient(
    curve: &LatentCurve,
    gen: &dyn Generator,
    mode: GradientMode,
    encoder: Option<&dyn Encoder>,
) -> Result<(f64, Tensor)> {
    let steps = curve.steps();
    let d = curve.dim();
    match mode {
        GradientMode::Exact => {
            let g = Graph::new();
            let z = g.leaf(curve.points().clone());
            let x = gen.generate(&g, z)?;
            let decoded = x.value();
            let energy = energy_from_decoded(&decoded);
            let cot = g.leaf(curvature_cotangent(&decoded));
            let grad = g.grad(x.mul(cot)?.sum(), &[z])?[0].value();
            Ok((energy, grad.slice_rows(1, steps)?))
        }
        GradientMode::EncoderApprox => {
            let encoder = encoder.ok_or(Error::MissingEncoder)?;
            if encoder.latent_dim() != d || encoder.data_dim() != gen.data_dim() {
                return Err(Error::shape("encoder", &[encoder.data_dim(), encoder.latent_dim()], &[gen.data_dim(), d]));
            }
            let decoded = decode_curve(curve, gen)?;
            let energy = energy_from_decoded(&decoded);
            let cot = curvature_cotangent(&decoded).slice_rows(1, steps)?;
            let interior = decoded.slice_rows(1, steps)?;
            let dim = decoded.shape()[1];
            // row k of J_e at every interior point, one backward pass per latent coordinate
            let g = Graph::new();
            let xv = g.leaf(interior);
            let e = encoder.encode(&g, xv)?;
            let mut out = vec![0.0; (steps - 1) * d];
            for k in 0..d {
                let mut pick = vec![0.0; d];
                pick[k] = 1.0;
                let col = e.matmul(g.leaf(Tensor::from_parts(vec![d, 1], pick)))?;
                let rows = g.grad(col.sum(), &[xv])?[0].value();
                for i in 0..steps - 1 {
                    let r = &rows.data()[i * dim..(i + 1) * dim];
                    let c = &cot.data()[i * dim..(i + 1) * dim];
                    out[i * d + k] = r.iter().zip(c).map(|(a, b)| a * b).sum();
                }
            }
            Ok((energy, Tensor::from_parts(vec![steps - 1, d], out)))
        }
    }
}

/// Gradient of the discrete energy with respect to `z_1..z_{T-1}`.
pub fn energy_gradient(
    curve: &LatentCurve,
    gen: &dyn Generator,
    mode: GradientMode,
    encoder: Option<&dyn Encoder>,
) -> Result<Tensor> {
    Ok(energy_and_gradient(curve, gen, mode, encoder)?.1)
}

/// Gradient-descent settings. Defaults follow the Armijo backtracking
/// scheme with a 300-iteration cap and a 0.001 relative-change stop rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SolverOptions {
    pub mode: GradientMode,
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub initial_step: f64,
    pub shrink: f64,
    pub armijo_c: f64,
    pub max_backtracks: usize,
    /// Start each line search at `min(initial_step, 2 α_prev)` instead of
    /// `initial_step`.
    pub reuse_step: bool,
    /// Optional extra stop rule: relative energy decrease over the last
    /// [`PLATEAU_WINDOW`] iterations at most this value. Off by default.
    #[serde(default)]
    pub energy_tolerance: Option<f64>,
}

/// Iterations spanned by [`SolverOptions::energy_tolerance`].
pub const PLATEAU_WINDOW: usize = 10;

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            mode: GradientMode::Exact,
            max_iterations: 300,
            relative_tolerance: 1e-3,
            initial_step: 1.0,
            shrink: 0.5,
            armijo_c: 1e-4,
            max_backtracks: 30,
            reuse_step: true,
            energy_tolerance: None,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        let ok = self.initial_step > 0.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.armijo_c > 0.0
            && self.armijo_c < 1.0
            && self.relative_tolerance >= 0.0
            && self.energy_tolerance.is_none_or(|t| t >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid solver options {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// Endpoints coincide; the constant curve is returned.
    Trivial,
    /// `|ΔE_k - ΔE_{k-1}| ≤ tol · ΔE_k`, or the gradient vanished.
    RelativeChange,
    MaxIterations,
    LineSearchFailed,
    /// The optional energy-plateau rule fired.
    EnergyPlateau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GeodesicReport {
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub steps: usize,
    pub final_energy: f64,
    /// Energy after every accepted iteration, starting with the initial curve.
    pub energy_history: Vec<f64>,
    /// `ΔE_k = Σ_i ‖∂E/∂z_i‖²` at every evaluated iterate.
    pub gradient_history: Vec<f64>,
    pub length: f64,
    pub speed_variation: f64,
    pub ode_residual: Option<f64>,
    /// Segment counts of coarser solves used as warm starts, coarsest first.
    pub warm_start_levels: Vec<usize>,
}

/// Minimizes the discrete energy from `initial`, keeping its endpoints fixed.
///
/// Failure of the line search ends the run with `converged = false` and the
/// best curve found; it is not an error.
pub fn solve_from(
    initial: LatentCurve,
    gen: &dyn Generator,
    options: &SolverOptions,
    encoder: Option<&dyn Encoder>,
) -> Result<(LatentCurve, GeodesicReport)> {
    options.validate()?;
    if options.mode == GradientMode::EncoderApprox && encoder.is_none() {
        return Err(Error::MissingEncoder);
    }
    let mut curve = initial;
    if curve.start() == curve.end() {
        let z0 = curve.start();
        curve = LatentCurve::linear(&z0, &z0, curve.steps())?;
        return finish(curve, gen, StopReason::Trivial, 0, vec![0.0], vec![0.0]);
    }

    let (mut energy, mut grad) = energy_and_gradient(&curve, gen, options.mode, encoder)?;
    let mut energy_history = vec![energy];
    let mut gradient_history = Vec::new();
    let mut last_alpha = options.initial_step;
    let mut iterations = 0;
    let mut reason = StopReason::MaxIterations;

    loop {
        let delta = grad.data().iter().map(|v| v * v).sum::<f64>();
        let previous = gradient_history.last().copied();
        gradient_history.push(delta);
        if delta == 0.0 {
            reason = StopReason::RelativeChange;
            break;
        }
        if let Some(prev) = previous {
            if (delta - prev).abs() <= options.relative_tolerance * delta {
                reason = StopReason::RelativeChange;
                break;
            }
        }
        if iterations >= options.max_iterations {
            break;
        }
        if let Some(tol) = options.energy_tolerance {
            let n = energy_history.len();
            if n > PLATEAU_WINDOW && energy_history[n - 1 - PLATEAU_WINDOW] - energy <= tol * energy {
                reason = StopReason::EnergyPlateau;
                break;
            }
        }

        let mut alpha = if options.reuse_step && iterations > 0 {
            (2.0 * last_alpha).min(options.initial_step)
        } else {
            options.initial_step
        };
        let mut accepted = None;
        for _ in 0..=options.max_backtracks {
            let trial = curve.stepped(&grad, alpha);
            let e = energy_from_decoded(&decode_curve(&trial, gen)?);
            if e <= energy - options.armijo_c * alpha * delta {
                accepted = Some(trial);
                break;
            }
            alpha *= options.shrink;
        }
        let Some(next) = accepted else {
            reason = StopReason::LineSearchFailed;
            break;
        };
        curve = next;
        last_alpha = alpha;
        iterations += 1;
        let (e, g) = energy_and_gradient(&curve, gen, options.mode, encoder)?;
        energy = e;
        grad = g;
        energy_history.push(energy);
    }
    finish(curve, gen, reason, iterations, energy_history, gradient_history)
}

fn finish(
    curve: LatentCurve,
    gen: &dyn Generator,
    reason: StopReason,
    iterations: usize,
    energy_history: Vec<f64>,
    gradient_history: Vec<f64>,
) -> Result<(LatentCurve, GeodesicReport)> {
    let decoded = decode_curve(&curve, gen)?;
    let seg = segment_lengths(&decoded);
    let report = GeodesicReport {
        converged: matches!(
            reason,
            StopReason::Trivial | StopReason::RelativeChange | StopReason::EnergyPlateau
        ),
        stop_reason: reason,
        iterations,
        steps: curve.steps(),
        final_energy: energy_from_decoded(&decoded),
        energy_history,
        gradient_history,
        length: seg.iter().sum(),
        speed_variation: coefficient_of_variation(&seg),
        ode_residual: None,
        warm_start_levels: Vec::new(),
    };
    Ok((curve, report))
}

/// Geodesic between `z0` and `zt` with `steps` segments, starting from
/// linear interpolation.
pub fn geodesic_solve(
    z0: &Tensor,
    zt: &Tensor,
    steps: usize,
    gen: &dyn Generator,
    options: &SolverOptions,
    encoder: Option<&dyn Encoder>,
) -> Result<(LatentCurve, GeodesicReport)> {
    check_endpoint(z0, gen)?;
    check_endpoint(zt, gen)?;
    solve_from(LatentCurve::linear(z0, zt, steps)?, gen, options, encoder)
}

/// Like [`geodesic_solve`], but first solves on coarser grids (halving `steps`
/// while it stays even and at least `coarsest`). Each result is refined by
/// cubic interpolation into the warm start of the next level, and every level
/// runs the full solver.
pub fn geodesic_solve_multilevel(
    z0: &Tensor,
    zt: &Tensor,
    steps: usize,
    coarsest: usize,
    gen: &dyn Generator,
    options: &SolverOptions,
    encoder: Option<&dyn Encoder>,
) -> Result<(LatentCurve, GeodesicReport)> {
    let mut levels = vec![steps];
    while levels[levels.len() - 1] % 2 == 0 && levels[levels.len() - 1] / 2 >= coarsest.max(2) {
        let next = levels[levels.len() - 1] / 2;
        levels.push(next);
    }
    levels.reverse();
    check_endpoint(z0, gen)?;
    check_endpoint(zt, gen)?;
    let mut curve = LatentCurve::linear(z0, zt, levels[0])?;
    let mut done = Vec::new();
    for (i, &level) in levels.iter().enumerate() {
        if i > 0 {
            curve = curve.refine_cubic();
        }
        let (solved, mut report) = solve_from(curve, gen, options, encoder)?;
        if i + 1 == levels.len() {
            report.warm_start_levels = done;
            return Ok((solved, report));
        }
        done.push(level);
        curve = solved;
    }
    unreachable!("levels is never empty")
}

fn check_endpoint(z: &Tensor, gen: &dyn Generator) -> Result<()> {
    if z.numel() != gen.latent_dim() {
        return Err(Error::shape("geodesic", z.shape(), &[gen.latent_dim()]));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IdentityDecoder;

    #[test]
    fn straight_line_has_zero_gradient() {
        let id = IdentityDecoder { dim: 2 };
        let c = LatentCurve::linear(&Tensor::vector(vec![0.0, 0.0]), &Tensor::vector(vec![1.0, 2.0]), 8).unwrap();
        let g = energy_gradient(&c, &id, GradientMode::Exact, None).unwrap();
        assert_eq!(g.shape(), &[7, 2]);
        assert!(g.max_abs() < 1e-12);
    }

    #[test]
    fn approx_mode_needs_encoder() {
        let id = IdentityDecoder { dim: 1 };
        let c = LatentCurve::linear(&Tensor::vector(vec![0.0]), &Tensor::vector(vec![1.0]), 4).unwrap();
        assert!(matches!(
            energy_gradient(&c, &id, GradientMode::EncoderApprox, None),
            Err(Error::MissingEncoder)
        ));
    }

    #[test]
    fn coincident_endpoints_are_trivial() {
        let id = IdentityDecoder { dim: 2 };
        let z = Tensor::vector(vec![0.4, 0.1]);
        let (c, rep) = geodesic_solve(&z, &z, 6, &id, &SolverOptions::default(), None).unwrap();
        assert!(c.is_constant());
        assert!(rep.converged);
        assert_eq!(rep.stop_reason, StopReason::Trivial);
    }
}
