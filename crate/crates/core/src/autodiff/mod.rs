//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Build a [`Graph`], record leaves and operations on it, then call
//! [`Graph::grad`]. Because backward passes are recorded with the same
//! primitives, gradients of gradients come from calling `grad` again.

mod blur;
mod graph;

pub use blur::GaussianBlur;
pub use graph::{Graph, Var};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Value and gradient of a scalar function at `x`.
pub fn value_and_grad<F>(x: &Tensor, f: F) -> Result<(f64, Tensor)>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    let graph = Graph::new();
    let xv = graph.leaf(x.clone());
    let y = f(&graph, xv)?;
    let value = y.value();
    let grads = graph.grad(y, &[xv])?;
    Ok((value.item(), (*grads[0].value()).clone()))
}

/// Vector-Jacobian product `vᵀ J_f(z)`, returned in the shape of `z`.
///
/// The Jacobian is never materialized: the product is one backward pass of
/// `⟨f(z), v⟩`.
pub fn vjp<F>(z: &Tensor, v: &Tensor, f: F) -> Result<Tensor>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    let graph = Graph::new();
    let zv = graph.leaf(z.clone());
    let y = f(&graph, zv)?;
    if y.shape() != v.shape() {
        return Err(Error::shape("vjp", &y.shape(), v.shape()));
    }
    let cotangent = graph.leaf(v.clone());
    let inner = y.dot(cotangent)?;
    let grads = graph.grad(inner, &[zv])?;
    Ok((*grads[0].value()).clone())
}

/// Jacobian-vector product `J_f(z) v`, returned in the shape of `f(z)`.
///
/// Uses the transpose trick: `u ↦ J_fᵀ u` is linear in `u`, so differentiating
/// `⟨J_fᵀ u, v⟩` with respect to `u` yields `J_f v`. Requires `f` to be free of
/// ReLUs on the path from `z`.
pub fn jvp<F>(z: &Tensor, v: &Tensor, f: F) -> Result<Tensor>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    if z.shape() != v.shape() {
        return Err(Error::shape("jvp", z.shape(), v.shape()));
    }
    let graph = Graph::new();
    let zv = graph.leaf(z.clone());
    let y = f(&graph, zv)?;
    let u = graph.leaf(Tensor::zeros(&y.shape()));
    let pulled = graph.grad(y.dot(u)?, &[zv])?[0];
    let tangent = graph.leaf(v.clone());
    let pushed = graph.grad(pulled.dot(tangent)?, &[u])?[0];
    Ok((*pushed.value()).clone())
}

/// Gradient of `outer(x, ∇inner(x))` with respect to `x`, differentiating
/// through the inner gradient.
pub fn second_order_grad<I, O>(x: &Tensor, inner: I, outer: O) -> Result<(f64, Tensor)>
where
    I: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
    O: for<'g> Fn(&'g Graph, Var<'g>, Var<'g>) -> Result<Var<'g>>,
{
    let graph = Graph::new();
    let xv = graph.leaf(x.clone());
    let y = inner(&graph, xv)?;
    let first = graph.grad(y, &[xv])?[0];
    let loss = outer(&graph, xv, first)?;
    let value = loss.value().item();
    let second = graph.grad(loss, &[xv])?[0];
    Ok((value, (*second.value()).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_with_identity() {
        let g = Graph::new();
        let a = g.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let i = g.leaf(Tensor::eye(2));
        assert_eq!(a.matmul(i).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let g = Graph::new();
        let y = g.scalar(0.0).softplus();
        assert_eq!(y.value().item(), 0.6931471805599453);
    }

    #[test]
    fn tanh_backward_at_zero_is_exact() {
        let g = Graph::new();
        let x = g.scalar(0.0);
        let y = x.tanh().scale(3.5);
        let grad = g.grad(y, &[x]).unwrap()[0].value().item();
        assert_eq!(grad, 3.5);
    }

    #[test]
    fn linear_map_gradient() {
        let (_, grad) = value_and_grad(&Tensor::vector(vec![3.0, 5.0]), |g, x| {
            x.dot(g.leaf(Tensor::vector(vec![2.0, -1.0])))
        })
        .unwrap();
        assert_eq!(grad.data(), &[2.0, -1.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let (value, grad) =
            value_and_grad(&Tensor::vector(vec![1.0, 2.0, 3.0]), |_, x| Ok(x.square().sum())).unwrap();
        assert_eq!(value, 14.0);
        assert_eq!(grad.data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.grad(x.square(), &[x]), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn shape_mismatch_names_the_primitive() {
        let g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]));
        let b = g.leaf(Tensor::zeros(&[2, 2]));
        let err = a.matmul(b).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { op: "matmul", .. }));
        assert!(a.add(b).unwrap_err().to_string().starts_with("add"));
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let unused = g.leaf(Tensor::zeros(&[3]));
        let grads = g.grad(x.sum(), &[x, unused]).unwrap();
        assert_eq!(grads[1].value().data(), &[0.0; 3]);
    }

    #[test]
    fn gradients_accumulate_over_paths() {
        let (_, grad) = value_and_grad(&Tensor::scalar(1.5), |_, x| Ok(x.mul(x)?.add(x.scale(3.0))?.sum())).unwrap();
        assert_eq!(grad.item(), 2.0 * 1.5 + 3.0);
    }

    #[test]
    fn cube_second_derivative() {
        // f(x) = x^3, d/dx f'(x) = 6x
        let (_, h) = second_order_grad(
            &Tensor::scalar(2.0),
            |_, x| Ok(x.square().mul(x)?.sum()),
            |_, _, first| Ok(first.sum()),
        )
        .unwrap();
        assert!((h.item() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn softplus_hessian_diagonal() {
        let x = Tensor::zeros(&[3]);
        for k in 0..3 {
            let (_, row) = second_order_grad(
                &x,
                |_, x| Ok(x.softplus().sum()),
                |g, _, first| {
                    let mut e = vec![0.0; 3];
                    e[k] = 1.0;
                    first.dot(g.leaf(Tensor::vector(e)))
                },
            )
            .unwrap();
            for (j, v) in row.data().iter().enumerate() {
                let expected = if j == k { 0.25 } else { 0.0 };
                assert!((v - expected).abs() < 1e-15, "{k},{j}: {v}");
            }
        }
    }

    #[test]
    fn second_order_through_relu_errors() {
        let err = second_order_grad(
            &Tensor::vector(vec![0.5, -0.2]),
            |_, x| Ok(x.relu().square().sum()),
            |_, _, first| Ok(first.square().sum()),
        )
        .unwrap_err();
        assert!(matches!(err, Error::SecondOrderThroughRelu));
        assert!(err.to_string().contains("softplus"));
    }

    #[test]
    fn guided_relu_drops_negative_upstream() {
        let g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0, -1.0]));
        let w = g.leaf(Tensor::vector(vec![1.0, -1.0, 1.0]));
        let y = x.guided_relu().dot(w).unwrap();
        let grad = g.grad(y, &[x]).unwrap()[0].value();
        assert_eq!(grad.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn vjp_identity_and_linear() {
        let z = Tensor::vector(vec![0.3, -0.7]);
        let v = Tensor::vector(vec![2.0, 5.0]);
        assert_eq!(vjp(&z, &v, |_, z| Ok(z)).unwrap(), v);

        let a = t(&[3, 2], &[1.0, 2.0, -1.0, 0.5, 3.0, -2.0]);
        let v3 = t(&[3, 1], &[1.0, -2.0, 0.5]);
        let z2 = t(&[2, 1], &[0.1, 0.2]);
        let got = vjp(&z2, &v3, |g, z| g.leaf(a.clone()).matmul(z)).unwrap();
        let expected = a.transpose().unwrap().matmul(&v3).unwrap();
        assert_eq!(got, expected);
        assert!(vjp(&z2, &v, |g, z| g.leaf(a.clone()).matmul(z)).is_err());
    }

    #[test]
    fn jvp_matches_linear_map() {
        let a = t(&[3, 2], &[1.0, 2.0, -1.0, 0.5, 3.0, -2.0]);
        let z = t(&[2, 1], &[0.1, 0.2]);
        let v = t(&[2, 1], &[1.0, -1.0]);
        let got = jvp(&z, &v, |g, z| Ok(g.leaf(a.clone()).matmul(z)?.tanh())).unwrap();
        let az = a.matmul(&z).unwrap();
        let av = a.matmul(&v).unwrap();
        for i in 0..3 {
            let expected = (1.0 - az.data()[i].tanh().powi(2)) * av.data()[i];
            assert!((got.data()[i] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn blur_primitive_backward_is_adjoint() {
        let kernel = Arc::new(GaussianBlur::new(4, 4, 1.0).unwrap());
        let x = Tensor::new(vec![4, 4], (0..16).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let w = Tensor::new(vec![4, 4], (0..16).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        let (_, grad) = value_and_grad(&x, |g, x| x.blur(&kernel)?.dot(g.leaf(w.clone()))).unwrap();
        assert_eq!(grad.data(), kernel.apply_adjoint(w.data()).as_slice());
    }
}
