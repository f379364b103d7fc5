use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{decode_batch, Generator};
use crate::tensor::Tensor;

/// Discrete latent curve `z_0..z_T`, stored as a `[T+1, d]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCurve {
    points: Tensor,
}

impl LatentCurve {
    /// Takes ownership of `[T+1, d]` points with `T ≥ 2`.
    pub fn from_points(points: Tensor) -> Result<Self> {
        let (rows, _) = points.dims2("latent_curve")?;
        if rows < 3 {
            return Err(Error::InvalidArgument(format!("curve needs T >= 2, got T = {}", rows - 1)));
        }
        if !points.is_finite() {
            return Err(Error::InvalidTensor("curve has non-finite points".into()));
        }
        Ok(LatentCurve { points })
    }

    /// `z_i = z0 + (i/T)(zT - z0)`, with both endpoints copied bit for bit.
    pub fn linear(z0: &Tensor, zt: &Tensor, steps: usize) -> Result<Self> {
        if z0.numel() != zt.numel() {
            return Err(Error::shape("curve_init_linear", z0.shape(), zt.shape()));
        }
        if steps < 2 {
            return Err(Error::InvalidArgument(format!("curve needs T >= 2, got T = {steps}")));
        }
        let d = z0.numel();
        let (a, b) = (z0.data(), zt.data());
        let mut data = Vec::with_capacity((steps + 1) * d);
        data.extend_from_slice(a);
        for i in 1..steps {
            let t = i as f64 / steps as f64;
            data.extend((0..d).map(|k| a[k] + t * (b[k] - a[k])));
        }
        data.extend_from_slice(b);
        LatentCurve::from_points(Tensor::from_parts(vec![steps + 1, d], data))
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn into_points(self) -> Tensor {
        self.points
    }

    /// Number of segments `T`.
    pub fn steps(&self) -> usize {
        self.points.shape()[0] - 1
    }

    pub fn dim(&self) -> usize {
        self.points.shape()[1]
    }

    pub fn point(&self, i: usize) -> Tensor {
        Tensor::from_parts(vec![self.dim()], self.points.row(i).to_vec())
    }

    pub fn start(&self) -> Tensor {
        self.point(0)
    }

    pub fn end(&self) -> Tensor {
        self.point(self.steps())
    }

    pub fn is_constant(&self) -> bool {
        let first = self.points.row(0);
        (1..=self.steps()).all(|i| self.points.row(i) == first)
    }

    /// The same curve traversed from `z_T` to `z_0`.
    pub fn reversed(&self) -> Self {
        let d = self.dim();
        let mut data = Vec::with_capacity(self.points.numel());
        for i in (0..=self.steps()).rev() {
            data.extend_from_slice(self.points.row(i));
        }
        LatentCurve {
            points: Tensor::from_parts(vec![self.steps() + 1, d], data),
        }
    }

    /// Piecewise-linear resampling to `steps` uniform parameter intervals.
    /// Existing vertices are reproduced exactly when `steps` is a multiple of `T`.
    pub fn resample(&self, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidArgument(format!("curve needs T >= 2, got T = {steps}")));
        }
        let t_old = self.steps();
        let d = self.dim();
        let mut data = Vec::with_capacity((steps + 1) * d);
        for j in 0..=steps {
            // position in old segment units, computed exactly in integers
            let num = j * t_old;
            let (seg, rem) = (num / steps, num % steps);
            if rem == 0 {
                data.extend_from_slice(self.points.row(seg));
            } else {
                let w = rem as f64 / steps as f64;
                let (a, b) = (self.points.row(seg), self.points.row(seg + 1));
                data.extend((0..d).map(|k| a[k] + w * (b[k] - a[k])));
            }
        }
        LatentCurve::from_points(Tensor::from_parts(vec![steps + 1, d], data))
    }

    /// Doubles `T` by inserting segment midpoints.
    pub fn refine(&self) -> Self {
        self.resample(2 * self.steps()).expect("refining a valid curve")
    }

    /// Doubles `T`, placing each new point on the cubic through the four
    /// nearest vertices (one-sided at the ends). Falls back to midpoints for
    /// `T < 3`.
    pub fn refine_cubic(&self) -> Self {
        let t = self.steps();
        if t < 3 {
            return self.refine();
        }
        let d = self.dim();
        let p = |i: usize| self.points.row(i);
        let mut data = Vec::with_capacity((2 * t + 1) * d);
        for i in 0..t {
            data.extend_from_slice(p(i));
            let (w, base) = if i == 0 {
                ([5.0, 15.0, -5.0, 1.0], 0)
            } else if i == t - 1 {
                ([1.0, -5.0, 15.0, 5.0], t - 3)
            } else {
                ([-1.0, 9.0, 9.0, -1.0], i - 1)
            };
            data.extend((0..d).map(|k| (0..4).map(|m| w[m] * p(base + m)[k]).sum::<f64>() / 16.0));
        }
        data.extend_from_slice(p(t));
        LatentCurve {
            points: Tensor::from_parts(vec![2 * t + 1, d], data),
        }
    }

    /// Replaces interior points by `z_i - alpha * direction_i`.
    pub(crate) fn stepped(&self, direction: &Tensor, alpha: f64) -> Self {
        let d = self.dim();
        let mut data = self.points.data().to_vec();
        for (v, g) in data[d..d * self.steps()].iter_mut().zip(direction.data()) {
            *v -= alpha * g;
        }
        LatentCurve {
            points: Tensor::from_parts(self.points.shape().to_vec(), data),
        }
    }

    /// Replaces the endpoints, keeping the interior.
    pub fn with_endpoints(&self, z0: &Tensor, zt: &Tensor) -> Result<Self> {
        let d = self.dim();
        if z0.numel() != d || zt.numel() != d {
            return Err(Error::shape("with_endpoints", z0.shape(), &[d]));
        }
        let mut data = self.points.data().to_vec();
        data[..d].copy_from_slice(z0.data());
        let last = d * self.steps();
        data[last..].copy_from_slice(zt.data());
        LatentCurve::from_points(Tensor::from_parts(self.points.shape().to_vec(), data))
    }
}

fn check_decoder(curve: &LatentCurve, gen: &dyn Generator) -> Result<()> {
    if curve.dim() != gen.latent_dim() {
        return Err(Error::shape("decoder", &[curve.dim()], &[gen.latent_dim()]));
    }
    Ok(())
}

/// `g(z_i)` for every point, as `[T+1, D]`.
pub fn decode_curve(curve: &LatentCurve, gen: &dyn Generator) -> Result<Tensor> {
    check_decoder(curve, gen)?;
    decode_batch(gen, curve.points())
}

/// `‖g(z_{i+1}) - g(z_i)‖` for each segment.
pub fn segment_lengths(decoded: &Tensor) -> Vec<f64> {
    let rows = decoded.shape()[0];
    (0..rows - 1)
        .map(|i| {
            let (a, b) = (decoded.row(i), decoded.row(i + 1));
            a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>().sqrt()
        })
        .collect()
}

fn energy_of(decoded: &Tensor) -> f64 {
    let t = (decoded.shape()[0] - 1) as f64;
    0.5 * t * segment_lengths(decoded).iter().map(|l| l * l).sum::<f64>()
}

/// `E = ½ Σ (1/δt) ‖g(z_{i+1}) - g(z_i)‖²` with `δt = 1/T`.
pub fn discrete_energy(curve: &LatentCurve, gen: &dyn Generator) -> Result<f64> {
    Ok(energy_of(&decode_curve(curve, gen)?))
}

pub(crate) fn energy_from_decoded(decoded: &Tensor) -> f64 {
    energy_of(decoded)
}

/// `L = Σ ‖g(z_{i+1}) - g(z_i)‖`.
pub fn curve_length(curve: &LatentCurve, gen: &dyn Generator) -> Result<f64> {
    Ok(segment_lengths(&decode_curve(curve, gen)?).iter().sum())
}

/// Standard deviation of segment speeds divided by their mean; zero for a
/// constant curve.
pub fn speed_variation(curve: &LatentCurve, gen: &dyn Generator) -> Result<f64> {
    Ok(coefficient_of_variation(&segment_lengths(&decode_curve(curve, gen)?)))
}

pub(crate) fn coefficient_of_variation(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// Summary statistics of a curve under a decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CurveStats {
    pub energy: f64,
    pub length: f64,
    pub speed_variation: f64,
}

pub fn curve_stats(curve: &LatentCurve, gen: &dyn Generator) -> Result<CurveStats> {
    let decoded = decode_curve(curve, gen)?;
    let seg = segment_lengths(&decoded);
    Ok(CurveStats {
        energy: energy_of(&decoded),
        length: seg.iter().sum(),
        speed_variation: coefficient_of_variation(&seg),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IdentityDecoder;

    #[test]
    fn linear_init_values() {
        let c = LatentCurve::linear(&Tensor::vector(vec![0.0]), &Tensor::vector(vec![1.0]), 4).unwrap();
        assert_eq!(c.points().data(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(LatentCurve::linear(&Tensor::vector(vec![0.0]), &Tensor::vector(vec![1.0]), 1).is_err());
    }

    #[test]
    fn constant_curve_and_unit_line() {
        let z = Tensor::vector(vec![0.3, -0.2]);
        let c = LatentCurve::linear(&z, &z, 5).unwrap();
        assert!(c.is_constant());
        let id = IdentityDecoder { dim: 2 };
        assert_eq!(discrete_energy(&c, &id).unwrap(), 0.0);
        assert_eq!(curve_length(&c, &id).unwrap(), 0.0);

        let id1 = IdentityDecoder { dim: 1 };
        for t in [2, 3, 8, 17] {
            let line = LatentCurve::linear(&Tensor::vector(vec![0.0]), &Tensor::vector(vec![1.0]), t).unwrap();
            assert!((discrete_energy(&line, &id1).unwrap() - 0.5).abs() < 1e-14);
            assert!((curve_length(&line, &id1).unwrap() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn nonuniform_spacing_costs_more() {
        let id = IdentityDecoder { dim: 1 };
        let uneven = LatentCurve::from_points(Tensor::new(vec![4, 1], vec![0.0, 0.1, 0.3, 1.0]).unwrap()).unwrap();
        assert!(discrete_energy(&uneven, &id).unwrap() > 0.5);
    }

    #[test]
    fn resample_keeps_vertices() {
        let c = LatentCurve::from_points(Tensor::new(vec![3, 1], vec![0.0, 1.0, 3.0]).unwrap()).unwrap();
        assert_eq!(c.refine().points().data(), &[0.0, 0.5, 1.0, 2.0, 3.0]);
        assert_eq!(c.resample(3).unwrap().points().data()[3], 3.0);
        assert_eq!(c.reversed().points().data(), &[3.0, 1.0, 0.0]);
    }

    #[test]
    fn cubic_refinement_reproduces_cubics() {
        let f = |t: f64| 1.0 - 2.0 * t + 0.5 * t * t * t;
        let pts: Vec<f64> = (0..=5).map(|i| f(i as f64 / 5.0)).collect();
        let c = LatentCurve::from_points(Tensor::new(vec![6, 1], pts).unwrap()).unwrap();
        for (i, v) in c.refine_cubic().points().data().iter().enumerate() {
            assert!((v - f(i as f64 / 10.0)).abs() < 1e-14);
        }
    }
}
