use crate::error::{Error, Result};

/// Separable Gaussian blur over the trailing `height x width` plane of a tensor.
///
/// The discrete kernel is truncated at radius `ceil(3 sigma)` and renormalized to
/// sum to one. Out-of-range taps clamp to the nearest edge pixel, so constant
/// images are fixed points.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBlur {
    height: usize,
    width: usize,
    sigma: f64,
    weights: Vec<f64>,
}

impl GaussianBlur {
    pub fn new(height: usize, width: usize, sigma: f64) -> Result<Self> {
        Self::with_radius(height, width, sigma, (3.0 * sigma).ceil() as usize)
    }

    /// Kernel truncated at a fixed `radius`. A blur family that shares the
    /// radius varies smoothly in `sigma`.
    pub fn with_radius(height: usize, width: usize, sigma: f64, radius: usize) -> Result<Self> {
        if height == 0 || width == 0 || !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "blur over {height}x{width} with sigma {sigma}"
            )));
        }
        let radius = if sigma == 0.0 { 0 } else { radius };
        let weights = if radius == 0 {
            vec![1.0]
        } else {
            let raw: Vec<f64> = (0..=2 * radius)
                .map(|i| {
                    let d = i as f64 - radius as f64;
                    (-d * d / (2.0 * sigma * sigma)).exp()
                })
                .collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|w| w / total).collect()
        };
        Ok(GaussianBlur {
            height,
            width,
            sigma,
            weights,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.weights.len() / 2
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub(crate) fn check(&self, shape: &[usize]) -> Result<()> {
        let numel: usize = shape.iter().product();
        if numel % self.plane() != 0 {
            return Err(Error::shape("blur", shape, &[self.height, self.width]));
        }
        Ok(())
    }

    fn clamp(i: isize, n: usize) -> usize {
        i.clamp(0, n as isize - 1) as usize
    }

    /// Applies the blur to every plane of `data`.
    pub fn apply(&self, data: &[f64]) -> Vec<f64> {
        let (h, w, r) = (self.height, self.width, self.radius() as isize);
        let mut out = vec![0.0; data.len()];
        let mut tmp = vec![0.0; self.plane()];
        for (src, dst) in data.chunks(self.plane()).zip(out.chunks_mut(self.plane())) {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, wk) in self.weights.iter().enumerate() {
                        let xx = Self::clamp(x as isize + k as isize - r, w);
                        acc += wk * src[y * w + xx];
                    }
                    tmp[y * w + x] = acc;
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, wk) in self.weights.iter().enumerate() {
                        let yy = Self::clamp(y as isize + k as isize - r, h);
                        acc += wk * tmp[yy * w + x];
                    }
                    dst[y * w + x] = acc;
                }
            }
        }
        out
    }

    /// Transpose of [`GaussianBlur::apply`] as a linear operator.
    pub fn apply_adjoint(&self, data: &[f64]) -> Vec<f64> {
        let (h, w, r) = (self.height, self.width, self.radius() as isize);
        let mut out = vec![0.0; data.len()];
        let mut tmp = vec![0.0; self.plane()];
        for (src, dst) in data.chunks(self.plane()).zip(out.chunks_mut(self.plane())) {
            tmp.iter_mut().for_each(|v| *v = 0.0);
            for y in 0..h {
                for x in 0..w {
                    let g = src[y * w + x];
                    for (k, wk) in self.weights.iter().enumerate() {
                        let yy = Self::clamp(y as isize + k as isize - r, h);
                        tmp[yy * w + x] += wk * g;
                    }
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let g = tmp[y * w + x];
                    for (k, wk) in self.weights.iter().enumerate() {
                        let xx = Self::clamp(x as isize + k as isize - r, w);
                        dst[y * w + xx] += wk * g;
                    }
                }
            }
        }
        out
    }
}
