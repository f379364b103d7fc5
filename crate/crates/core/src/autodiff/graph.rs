//! Recorded computation graph with reverse-mode differentiation.
//!
//! Every backward rule is written in terms of the same primitives it
//! differentiates, and its results are recorded on the graph. Gradients
//! returned by [`Graph::grad`] are therefore ordinary [`Var`]s that can be
//! differentiated again.

use std::cell::RefCell;
use std::sync::Arc;

use super::blur::GaussianBlur;
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// How a [`Op::Select`] node came to exist. Masks produced while
/// differentiating a ReLU are not differentiable a second time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SelectKind {
    Plain,
    Relu,
    Guided,
    ReluGrad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Square,
    Sqrt,
    Sin,
    Cos,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MulScalar(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Sum(usize),
    Broadcast(usize),
    SumRows(usize),
    RepeatRows(usize),
    Unary(usize, Unary),
    Softplus(usize, f64),
    Select {
        mask: Arc<Vec<bool>>,
        on: usize,
        off: Option<usize>,
        kind: SelectKind,
    },
    Reshape(usize),
    SliceRows(usize, usize),
    PadRows(usize, usize),
    ConcatRows(Vec<usize>),
    Blur(usize, Arc<GaussianBlur>),
    BlurAdjoint(usize, Arc<GaussianBlur>),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MulScalar(a, b) | MatMul(a, b) => {
                vec![*a, *b]
            }
            Scale(a, _) | AddScalar(a) | Transpose(a) | Sum(a) | Broadcast(a) | SumRows(a)
            | RepeatRows(a) | Unary(a, _) | Softplus(a, _) | Reshape(a) | SliceRows(a, _)
            | PadRows(a, _) | Blur(a, _) | BlurAdjoint(a, _) => vec![*a],
            Select { on, off, .. } => match off {
                Some(b) => vec![*on, *b],
                None => vec![*on],
            },
            ConcatRows(items) => items.clone(),
        }
    }
}

struct Node {
    op: Op,
    value: Arc<Tensor>,
}

/// A tape of recorded operations. Confined to one thread; build one graph per
/// computation and drop it afterwards.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Tensor) -> Var<'_> {
        self.push_arc(op, Arc::new(value))
    }

    fn push_arc(&self, op: Op, value: Arc<Tensor>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    /// Records an input or parameter.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value)
    }

    /// Records a shared tensor (typically a network weight) without copying it.
    pub fn leaf_shared(&self, value: Arc<Tensor>) -> Var<'_> {
        self.push_arc(Op::Leaf, value)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(value))
    }

    pub fn concat_rows<'g>(&'g self, items: &[Var<'g>]) -> Result<Var<'g>> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_rows of zero tensors".into()))?
            .value();
        let tail = &first.shape()[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for v in items {
            let t = v.value();
            if &t.shape()[1..] != tail {
                return Err(Error::shape("concat_rows", first.shape(), t.shape()));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(tail);
        Ok(self.push(
            Op::ConcatRows(items.iter().map(|v| v.id).collect()),
            Tensor::from_parts(shape, data),
        ))
    }

    /// Gradients of the scalar `root` with respect to each of `wrt`.
    ///
    /// Contributions along multiple paths are summed. Variables that `root`
    /// does not depend on receive zeros. The returned variables are recorded
    /// on this graph and may be differentiated again.
    pub fn grad<'g>(&'g self, root: Var<'g>, wrt: &[Var<'g>]) -> Result<Vec<Var<'g>>> {
        let root_value = root.value();
        if root_value.numel() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let n = root.id + 1;
        let ops: Vec<Op> = self.nodes.borrow()[..n].iter().map(|node| node.op.clone()).collect();

        let mut needs = vec![false; n];
        let mut lowest = n;
        for w in wrt {
            if w.id < n {
                needs[w.id] = true;
                lowest = lowest.min(w.id);
            }
        }
        for i in lowest..n {
            if !needs[i] {
                needs[i] = ops[i].inputs().iter().any(|&j| needs[j]);
            }
        }

        let mut adjoint: Vec<Option<Var<'g>>> = vec![None; n];
        if needs[root.id] {
            adjoint[root.id] = Some(self.leaf(Tensor::ones(root_value.shape())));
        }
        for i in (0..n).rev() {
            let Some(upstream) = adjoint[i] else { continue };
            if !needs[i] {
                continue;
            }
            let this = Var { graph: self, id: i };
            for (j, contribution) in self.backward_rule(&ops[i], this, upstream, &needs)? {
                adjoint[j] = Some(match adjoint[j] {
                    Some(prev) => prev.add(contribution)?,
                    None => contribution,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match adjoint.get(w.id).copied().flatten() {
                Some(g) => g,
                None => self.leaf(Tensor::zeros(w.value().shape())),
            })
            .collect())
    }

    fn backward_rule<'g>(
        &'g self,
        op: &Op,
        out: Var<'g>,
        g: Var<'g>,
        needs: &[bool],
    ) -> Result<Vec<(usize, Var<'g>)>> {
        let var = |id| Var { graph: self, id };
        let mut res = Vec::with_capacity(2);
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs[a] {
                    res.push((a, g));
                }
                if needs[b] {
                    res.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if needs[a] {
                    res.push((a, g));
                }
                if needs[b] {
                    res.push((b, g.neg()));
                }
            }
            Op::Mul(a, b) => {
                if needs[a] {
                    res.push((a, g.mul(var(b))?));
                }
                if needs[b] {
                    res.push((b, g.mul(var(a))?));
                }
            }
            Op::Div(a, b) => {
                let ga = g.div(var(b))?;
                if needs[b] {
                    res.push((b, ga.mul(out)?.neg()));
                }
                if needs[a] {
                    res.push((a, ga));
                }
            }
            Op::Scale(a, c) => res.push((a, g.scale(c))),
            Op::AddScalar(a) => res.push((a, g)),
            Op::MulScalar(a, s) => {
                if needs[a] {
                    res.push((a, g.mul_scalar(var(s))?));
                }
                if needs[s] {
                    res.push((s, g.mul(var(a))?.sum()));
                }
            }
            Op::MatMul(a, b) => {
                if needs[a] {
                    res.push((a, g.matmul(var(b).transpose()?)?));
                }
                if needs[b] {
                    res.push((b, var(a).transpose()?.matmul(g)?));
                }
            }
            Op::Transpose(a) => res.push((a, g.transpose()?)),
            Op::Sum(a) => res.push((a, g.broadcast_to(var(a).value().shape())?)),
            Op::Broadcast(a) => res.push((a, g.sum())),
            Op::SumRows(a) => res.push((a, g.repeat_rows(var(a).value().shape()[0])?)),
            Op::RepeatRows(a) => res.push((a, g.sum_rows())),
            Op::Unary(a, f) => {
                let x = var(a);
                let local = match f {
                    // 1 - y^2
                    Unary::Tanh => out.square().scale(-1.0).add_scalar(1.0),
                    // y (1 - y)
                    Unary::Sigmoid => out.mul(out.scale(-1.0).add_scalar(1.0))?,
                    Unary::Exp => out,
                    Unary::Log => {
                        res.push((a, g.div(x)?));
                        return Ok(res);
                    }
                    Unary::Square => x.scale(2.0),
                    Unary::Sqrt => {
                        res.push((a, g.scale(0.5).div(out)?));
                        return Ok(res);
                    }
                    Unary::Sin => x.cos(),
                    Unary::Cos => x.sin().neg(),
                };
                res.push((a, g.mul(local)?));
            }
            Op::Softplus(a, beta) => {
                res.push((a, g.mul(var(a).scale(beta).sigmoid())?));
            }
            Op::Select {
                ref mask,
                on,
                off,
                kind,
            } => {
                match kind {
                    SelectKind::ReluGrad => return Err(Error::SecondOrderThroughRelu),
                    SelectKind::Plain | SelectKind::Relu | SelectKind::Guided => {}
                }
                if needs[on] {
                    let contribution = match kind {
                        SelectKind::Relu => g.select_kind(Arc::clone(mask), None, SelectKind::ReluGrad)?,
                        SelectKind::Guided => {
                            let gv = g.value();
                            let guided: Vec<bool> =
                                mask.iter().zip(gv.data()).map(|(&m, &u)| m && u > 0.0).collect();
                            g.select_kind(Arc::new(guided), None, SelectKind::ReluGrad)?
                        }
                        _ => g.select_kind(Arc::clone(mask), None, SelectKind::Plain)?,
                    };
                    res.push((on, contribution));
                }
                if let Some(b) = off {
                    if needs[b] {
                        let inverse: Vec<bool> = mask.iter().map(|m| !m).collect();
                        res.push((b, g.select_kind(Arc::new(inverse), None, SelectKind::Plain)?));
                    }
                }
            }
            Op::Reshape(a) => res.push((a, g.reshape(var(a).value().shape())?)),
            Op::SliceRows(a, start) => {
                let total = var(a).value().shape()[0];
                res.push((a, g.pad_rows(start, total)?));
            }
            Op::PadRows(a, start) => {
                let len = var(a).value().shape()[0];
                res.push((a, g.slice_rows(start, start + len)?));
            }
            Op::ConcatRows(ref items) => {
                let mut offset = 0;
                for &item in items {
                    let len = var(item).value().shape()[0];
                    if needs[item] {
                        res.push((item, g.slice_rows(offset, offset + len)?));
                    }
                    offset += len;
                }
            }
            Op::Blur(a, ref kernel) => res.push((a, g.blur_adjoint(kernel)?)),
            Op::BlurAdjoint(a, ref kernel) => res.push((a, g.blur(kernel)?)),
        }
        Ok(res)
    }
}

fn binary_same_shape<'g>(
    a: Var<'g>,
    b: Var<'g>,
    name: &'static str,
    op: Op,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Var<'g>> {
    let (va, vb) = (a.value(), b.value());
    let value = va.zip_map(&vb, name, f)?;
    Ok(a.graph.push(op, value))
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    fn unary_map(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'g> {
        let value = self.value().map(f);
        self.graph.push(op, value)
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        binary_same_shape(self, other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        binary_same_shape(self, other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        binary_same_shape(self, other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Elementwise quotient.
    pub fn div(self, other: Var<'g>) -> Result<Var<'g>> {
        binary_same_shape(self, other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        self.unary_map(Op::Scale(self.id, c), |v| v * c)
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.unary_map(Op::AddScalar(self.id), |v| v + c)
    }

    /// Multiplies every element by the one-element variable `s`.
    pub fn mul_scalar(self, s: Var<'g>) -> Result<Var<'g>> {
        let sv = s.value();
        if sv.numel() != 1 {
            return Err(Error::shape("mul_scalar", &self.shape(), sv.shape()));
        }
        let c = sv.item();
        Ok(self.unary_map(Op::MulScalar(self.id, s.id), |v| v * c))
    }

    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        let (m, k) = a.dims2("matmul")?;
        let (k2, n) = b.dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", a.shape(), b.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, &mut out);
        Ok(self
            .graph
            .push(Op::MatMul(self.id, other.id), Tensor::from_parts(vec![m, n], out)))
    }

    pub fn transpose(self) -> Result<Var<'g>> {
        let value = self.value().transpose()?;
        Ok(self.graph.push(Op::Transpose(self.id), value))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(self) -> Var<'g> {
        let value = Tensor::scalar(self.value().sum());
        self.graph.push(Op::Sum(self.id), value)
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(self, other: Var<'g>) -> Result<Var<'g>> {
        Ok(self.mul(other)?.sum())
    }

    /// Replicates a one-element tensor into `shape`.
    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'g>> {
        let v = self.value();
        if v.numel() != 1 || shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape("broadcast", v.shape(), shape));
        }
        Ok(self.graph.push(Op::Broadcast(self.id), Tensor::full(shape, v.item())))
    }

    /// Sums over the leading axis, keeping it with extent one.
    pub fn sum_rows(self) -> Var<'g> {
        let v = self.value();
        let rows = v.shape()[0];
        let stride = v.numel() / rows;
        let mut data = vec![0.0; stride];
        for chunk in v.data().chunks(stride) {
            for (acc, x) in data.iter_mut().zip(chunk) {
                *acc += x;
            }
        }
        let mut shape = v.shape().to_vec();
        shape[0] = 1;
        self.graph.push(Op::SumRows(self.id), Tensor::from_parts(shape, data))
    }

    /// Repeats a tensor with leading extent one `n` times along that axis.
    pub fn repeat_rows(self, n: usize) -> Result<Var<'g>> {
        let v = self.value();
        if v.shape()[0] != 1 || n == 0 {
            return Err(Error::shape("repeat_rows", v.shape(), &[n]));
        }
        let mut shape = v.shape().to_vec();
        shape[0] = n;
        let data = v.data().repeat(n);
        Ok(self.graph.push(Op::RepeatRows(self.id), Tensor::from_parts(shape, data)))
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary_map(Op::Unary(self.id, Unary::Tanh), f64::tanh)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary_map(Op::Unary(self.id, Unary::Sigmoid), sigmoid)
    }

    pub fn exp(self) -> Var<'g> {
        self.unary_map(Op::Unary(self.id, Unary::Exp), f64::exp)
    }

    pub fn log(self) -> Var<'g> {
        self.unary_map(Op::Unary(self.id, Unary::Log), f64::ln)
    }

    pub fn square(self) -> Var<'g> {
        self.unary_map(Op::Unary(self.id, Unary::Square), |v| v * v)
    }

    pub fn sqrt(self) -> Var<'g> {
        self.unary_map(Op::Unary(self.id, Unary::Sqrt), f64::sqrt)
    }

    pub fn sin(self) -> Var<'g> {
        self.unary_map(Op::Unary(self.id, Unary::Sin), f64::sin)
    }

    pub fn cos(self) -> Var<'g> {
        self.unary_map(Op::Unary(self.id, Unary::Cos), f64::cos)
    }

    /// `ln(1 + exp(x))`.
    pub fn softplus(self) -> Var<'g> {
        self.softplus_beta(1.0)
    }

    /// `ln(1 + exp(beta x)) / beta`, which tends to ReLU as `beta` grows.
    pub fn softplus_beta(self, beta: f64) -> Var<'g> {
        self.unary_map(Op::Softplus(self.id, beta), |v| softplus(beta * v) / beta)
    }

    fn select_kind(self, mask: Arc<Vec<bool>>, off: Option<Var<'g>>, kind: SelectKind) -> Result<Var<'g>> {
        let on = self.value();
        if mask.len() != on.numel() {
            return Err(Error::shape("select", on.shape(), &[mask.len()]));
        }
        let data: Vec<f64> = match off {
            Some(b) => {
                let bv = b.value();
                if bv.shape() != on.shape() {
                    return Err(Error::shape("select", on.shape(), bv.shape()));
                }
                mask.iter()
                    .zip(on.data().iter().zip(bv.data()))
                    .map(|(&m, (&x, &y))| if m { x } else { y })
                    .collect()
            }
            None => mask.iter().zip(on.data()).map(|(&m, &x)| if m { x } else { 0.0 }).collect(),
        };
        let value = Tensor::from_parts(on.shape().to_vec(), data);
        Ok(self.graph.push(
            Op::Select {
                mask,
                on: self.id,
                off: off.map(|b| b.id),
                kind,
            },
            value,
        ))
    }

    /// Elementwise `mask ? self : other` (or zero when `other` is `None`).
    /// The mask is a constant; no gradient flows into it.
    pub fn select(self, mask: Arc<Vec<bool>>, other: Option<Var<'g>>) -> Result<Var<'g>> {
        self.select_kind(mask, other, SelectKind::Plain)
    }

    fn positive_mask(&self) -> Arc<Vec<bool>> {
        Arc::new(self.value().data().iter().map(|&v| v > 0.0).collect())
    }

    pub fn relu(self) -> Var<'g> {
        let mask = self.positive_mask();
        self.select_kind(mask, None, SelectKind::Relu)
            .expect("mask built from own shape")
    }

    /// ReLU whose backward pass also zeroes negative upstream gradients.
    pub fn guided_relu(self) -> Var<'g> {
        let mask = self.positive_mask();
        self.select_kind(mask, None, SelectKind::Guided)
            .expect("mask built from own shape")
    }

    /// `x` for `x > 0`, `exp(x) - 1` otherwise.
    pub fn elu(self) -> Var<'g> {
        let mask = self.positive_mask();
        let inverse = Arc::new(mask.iter().map(|m| !m).collect::<Vec<_>>());
        // exp only sees non-positive inputs so the unused branch cannot overflow.
        let negative_part = self
            .select(inverse, None)
            .expect("mask built from own shape")
            .exp()
            .add_scalar(-1.0);
        self.select(mask, Some(negative_part))
            .expect("mask built from own shape")
    }

    /// `x * sigmoid(x)`.
    pub fn silu(self) -> Var<'g> {
        self.mul(self.sigmoid()).expect("same shape")
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let value = self.value().reshape(shape)?;
        Ok(self.graph.push(Op::Reshape(self.id), value))
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'g>> {
        let value = self.value().slice_rows(start, end)?;
        Ok(self.graph.push(Op::SliceRows(self.id, start), value))
    }

    /// Embeds `self` at row offset `start` of a zero tensor with `total` rows.
    pub fn pad_rows(self, start: usize, total: usize) -> Result<Var<'g>> {
        let v = self.value();
        let rows = v.shape()[0];
        if start + rows > total {
            return Err(Error::shape("pad_rows", v.shape(), &[start, total]));
        }
        let stride = v.numel() / rows;
        let mut data = vec![0.0; total * stride];
        data[start * stride..(start + rows) * stride].copy_from_slice(v.data());
        let mut shape = v.shape().to_vec();
        shape[0] = total;
        Ok(self
            .graph
            .push(Op::PadRows(self.id, start), Tensor::from_parts(shape, data)))
    }

    pub fn blur(self, kernel: &Arc<GaussianBlur>) -> Result<Var<'g>> {
        let v = self.value();
        kernel.check(v.shape())?;
        let value = Tensor::from_parts(v.shape().to_vec(), kernel.apply(v.data()));
        Ok(self.graph.push(Op::Blur(self.id, Arc::clone(kernel)), value))
    }

    pub fn blur_adjoint(self, kernel: &Arc<GaussianBlur>) -> Result<Var<'g>> {
        let v = self.value();
        kernel.check(v.shape())?;
        let value = Tensor::from_parts(v.shape().to_vec(), kernel.apply_adjoint(v.data()));
        Ok(self.graph.push(Op::BlurAdjoint(self.id, Arc::clone(kernel)), value))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
