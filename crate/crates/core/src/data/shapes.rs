use std::f64::consts::PI;

use super::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

/// Side length of generated images.
pub const SHAPE_SIZE: usize = 32;

/// Width, in pixels, of the logistic edge between shape and background.
const EDGE: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Disk,
    Square,
    Cross,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Disk, Shape::Square, Shape::Cross, Shape::Triangle];

    /// Signed distance (negative inside) at local coordinates `(x, y)` for
    /// a shape of size `r`.
    fn distance(self, x: f64, y: f64, r: f64) -> f64 {
        match self {
            Shape::Disk => x.hypot(y) - r,
            Shape::Square => rect(x, y, 0.8 * r, 0.8 * r),
            Shape::Cross => rect(x, y, r, 0.3 * r).min(rect(x, y, 0.3 * r, r)),
            Shape::Triangle => (0..3)
                .map(|k| {
                    let a = PI / 2.0 + 2.0 * PI * k as f64 / 3.0;
                    x * a.cos() + y * a.sin() - 0.6 * r
                })
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

fn rect(x: f64, y: f64, hx: f64, hy: f64) -> f64 {
    let qx = x.abs() - hx;
    let qy = y.abs() - hy;
    qx.max(0.0).hypot(qy.max(0.0)) + qx.max(qy).min(0.0)
}

/// Renders one shape on a black background with soft edges.
pub fn render_shape(shape: Shape, cx: f64, cy: f64, r: f64, angle: f64) -> Tensor {
    let (s, c) = angle.sin_cos();
    let mut data = Vec::with_capacity(SHAPE_SIZE * SHAPE_SIZE);
    for row in 0..SHAPE_SIZE {
        for col in 0..SHAPE_SIZE {
            let (px, py) = (col as f64 + 0.5 - cx, row as f64 + 0.5 - cy);
            let (x, y) = (c * px + s * py, -s * px + c * py);
            let d = shape.distance(x, y, r);
            let inside = 1.0 / (1.0 + (d / EDGE).exp());
            data.push(2.0 * inside - 1.0);
        }
    }
    Tensor::from_parts(vec![SHAPE_SIZE, SHAPE_SIZE], data)
}

/// `n` images of disks, squares, crosses and triangles with random
/// position, size and rotation. Labels are assigned round-robin.
pub fn gen_shapes(n: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if classes == 0 || classes > Shape::ALL.len() {
        return Err(Error::InvalidArgument(format!("shapes supports 1..=4 classes, got {classes}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("dataset must not be empty".into()));
    }
    let dim = SHAPE_SIZE * SHAPE_SIZE;
    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let mut rng = Rng::new(derive_seed(seed, i as u64));
        let r = rng.uniform_in(5.0, 9.0);
        let cx = rng.uniform_in(11.0, 21.0);
        let cy = rng.uniform_in(11.0, 21.0);
        let angle = rng.uniform_in(0.0, 2.0 * PI);
        inputs.extend(render_shape(Shape::ALL[label], cx, cy, r, angle).into_data());
        labels.push(label);
    }
    Ok(Dataset {
        inputs: Tensor::from_parts(vec![n, dim], inputs),
        labels,
        num_classes: classes,
        height: SHAPE_SIZE,
        width: SHAPE_SIZE,
        provenance: Provenance {
            generator: "shapes".into(),
            seed,
            n,
            classes,
            baseline_fraction: 0.0,
        },
    })
}
