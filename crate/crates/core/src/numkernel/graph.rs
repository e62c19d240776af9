//! Reverse-mode differentiation over small computation graphs.
//!
//! A [`Graph`] is a Wengert list: every op appends a node holding its
//! forward value, and [`Graph::backward`] walks the list in reverse,
//! accumulating adjoints. Ops take `&self` (the list lives in a
//! `RefCell`) so expressions can be nested freely.
//!
//! Every node's value is checked for finiteness on creation. The first
//! op to produce a non-finite value is remembered and reported by
//! `backward`.

use std::cell::{Cell, RefCell};

use super::tensor::{kernel, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    SoftmaxRows(Var),
    Standardize { input: Var, normed: Tensor, inv_std: Vec<f64> },
    NormalizeFrozen { input: Var, std: Tensor },
    Combine { weights: Var, items: Vec<Var> },
    Sum(Var),
    Mean(Var),
    Slice { input: Var, start: usize },
    Reshape(Var),
    SquaredDistance(Var, Var),
    Mse(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::ScaleBy(..) => "scale_by",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::Relu(..) => "relu",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::Standardize { .. } => "standardize",
            Op::NormalizeFrozen { .. } => "normalize_frozen",
            Op::Combine { .. } => "combine",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Slice { .. } => "slice",
            Op::Reshape(..) => "reshape",
            Op::SquaredDistance(..) => "squared_distance",
            Op::Mse(..) => "mse",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub const STANDARDIZE_EPS: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    failure: Cell<Option<&'static str>>,
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn column_sums(t: &Tensor) -> Tensor {
    let c = t.cols();
    let mut out = vec![0.0; c];
    for row in t.data().chunks(c) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::row(out)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The first op that produced a non-finite value, if any.
    pub fn failure(&self) -> Option<&'static str> {
        self.failure.get()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        if self.failure.get().is_none() && !value.is_finite() {
            self.failure.set(Some(op.name()));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn grad_any(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn unary(&self, a: Var, f: impl FnOnce(&Tensor) -> Result<Tensor>, op: Op) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.0].value)?
        };
        let rg = self.grad_any(&[a]);
        Ok(self.push(value, op, rg))
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
        op: Op,
    ) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.0].value, &nodes[b.0].value)?
        };
        let rg = self.grad_any(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, kernel::matmul, Op::MatMul(a, b))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, kernel::add, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, kernel::sub, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, kernel::mul, Op::Mul(a, b))
    }

    pub fn add_row(&self, a: Var, v: Var) -> Result<Var> {
        self.binary(a, v, kernel::add_row, Op::AddRow(a, v))
    }

    pub fn mul_row(&self, a: Var, v: Var) -> Result<Var> {
        self.binary(a, v, kernel::mul_row, Op::MulRow(a, v))
    }

    /// `s · a` for a 1×1 node `s`.
    pub fn scale_by(&self, a: Var, s: Var) -> Result<Var> {
        self.binary(
            a,
            s,
            |a, s| {
                if s.len() != 1 {
                    return Err(Error::shape("scale_by", format!("{:?} is not a scalar", s.shape())));
                }
                Ok(kernel::scale(a, s.item()))
            },
            Op::ScaleBy(a, s),
        )
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, |t| Ok(kernel::scale(t, s)), Op::Scale(a, s))
    }

    /// `a + s` elementwise for a constant `s`.
    pub fn shift(&self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, |t| Ok(t.map(|v| v + s)), Op::Shift(a))
    }

    /// `1 - a`
    pub fn one_minus(&self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.shift(neg, 1.0)
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| Ok(kernel::relu(t)), Op::Relu(a))
    }

    pub fn softmax_rows(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| Ok(kernel::softmax_rows(t)), Op::SoftmaxRows(a))
    }

    /// Column standardization with batch statistics (training-mode
    /// normalization).
    pub fn standardize(&self, a: Var) -> Result<Var> {
        let (normed, inv_std) = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            if x.rows() < 2 {
                return Err(Error::shape("standardize", "needs at least two rows"));
            }
            let (mean, var) = kernel::column_moments(x);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + STANDARDIZE_EPS).sqrt()).collect();
            let c = x.cols();
            let mut normed = x.clone();
            for row in normed.data_mut().chunks_mut(c) {
                for ((o, mu), is) in row.iter_mut().zip(&mean).zip(&inv_std) {
                    *o = (*o - mu) * is;
                }
            }
            (normed, inv_std)
        };
        let rg = self.grad_any(&[a]);
        Ok(self.push(
            normed.clone(),
            Op::Standardize {
                input: a,
                normed,
                inv_std,
            },
            rg,
        ))
    }

    /// `(a - mean) / std` with constant per-column statistics.
    pub fn normalize_frozen(&self, a: Var, mean: &Tensor, std: &Tensor) -> Result<Var> {
        self.unary(
            a,
            |t| kernel::normalize_frozen(t, mean, std),
            Op::NormalizeFrozen {
                input: a,
                std: std.clone(),
            },
        )
    }

    /// `Σ_k weights[k] · items[k]`, accumulated left to right.
    pub fn combine(&self, weights: Var, items: &[Var]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let w = &nodes[weights.0].value;
            if w.len() != items.len() || items.is_empty() {
                return Err(Error::shape(
                    "combine",
                    format!("{} weights for {} items", w.len(), items.len()),
                ));
            }
            let first = &nodes[items[0].0].value;
            let mut acc = Tensor::zeros(first.shape());
            for (k, item) in items.iter().enumerate() {
                let y = &nodes[item.0].value;
                if y.shape() != first.shape() {
                    return Err(Error::shape("combine", "items differ in shape"));
                }
                let wk = w.data()[k];
                for (a, &v) in acc.data_mut().iter_mut().zip(y.data()) {
                    *a += wk * v;
                }
            }
            acc
        };
        let mut all = items.to_vec();
        all.push(weights);
        let rg = self.grad_any(&all);
        Ok(self.push(
            value,
            Op::Combine {
                weights,
                items: items.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| Ok(Tensor::scalar(t.sum())), Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| Ok(Tensor::scalar(t.sum() / t.len() as f64)), Op::Mean(a))
    }

    /// Contiguous run of the flattened values, as a 1×len row.
    pub fn slice(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.unary(
            a,
            |t| {
                if start + len > t.len() || len == 0 {
                    return Err(Error::shape(
                        "slice",
                        format!("[{start}, {}) out of {}", start + len, t.len()),
                    ));
                }
                Ok(Tensor::row(t.data()[start..start + len].to_vec()))
            },
            Op::Slice { input: a, start },
        )
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        self.unary(a, |t| t.reshape(shape), Op::Reshape(a))
    }

    /// Single flattened entry as a 1×1 node.
    pub fn element(&self, a: Var, idx: usize) -> Result<Var> {
        self.slice(a, idx, 1)
    }

    /// `Σ (a - b)^2` as a 1×1 node.
    pub fn squared_distance(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            a,
            b,
            |a, b| Ok(Tensor::scalar(kernel::squared_distance(a, b)?)),
            Op::SquaredDistance(a, b),
        )
    }

    /// Mean squared error as a 1×1 node.
    pub fn mse(&self, pred: Var, target: Var) -> Result<Var> {
        self.binary(
            pred,
            target,
            |p, t| Ok(Tensor::scalar(kernel::mse(p, t)?)),
            Op::Mse(pred, target),
        )
    }

    /// Sum of several 1×1 (or equally shaped) nodes; `None` when empty.
    pub fn add_all(&self, vars: &[Var]) -> Result<Option<Var>> {
        let mut iter = vars.iter();
        let Some(&first) = iter.next() else {
            return Ok(None);
        };
        let mut acc = first;
        for &v in iter {
            acc = self.add(acc, v)?;
        }
        Ok(Some(acc))
    }

    /// Reverse sweep from a 1×1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if let Some(op) = self.failure.get() {
            return Err(Error::NonFinite { op });
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss has shape {:?}", nodes[loss.0].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(nodes[loss.0].value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(d) = grads[idx].take() else {
                continue;
            };
            let needs = |v: &Var| nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(d);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads[a.0], kernel::matmul_nt(&d, &nodes[b.0].value)?);
                    }
                    if needs(b) {
                        accumulate(&mut grads[b.0], kernel::matmul_tn(&nodes[a.0].value, &d)?);
                    }
                }
                Op::Add(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads[a.0], d.clone());
                    }
                    if needs(b) {
                        accumulate(&mut grads[b.0], d);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads[a.0], d.clone());
                    }
                    if needs(b) {
                        accumulate(&mut grads[b.0], kernel::scale(&d, -1.0));
                    }
                }
                Op::Mul(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads[a.0], kernel::mul(&d, &nodes[b.0].value)?);
                    }
                    if needs(b) {
                        accumulate(&mut grads[b.0], kernel::mul(&d, &nodes[a.0].value)?);
                    }
                }
                Op::AddRow(a, v) => {
                    if needs(v) {
                        accumulate(&mut grads[v.0], column_sums(&d));
                    }
                    if needs(a) {
                        accumulate(&mut grads[a.0], d);
                    }
                }
                Op::MulRow(a, v) => {
                    if needs(v) {
                        let prod = kernel::mul(&d, &nodes[a.0].value)?;
                        accumulate(&mut grads[v.0], column_sums(&prod));
                    }
                    if needs(a) {
                        accumulate(&mut grads[a.0], kernel::mul_row(&d, &nodes[v.0].value)?);
                    }
                }
                Op::ScaleBy(a, s) => {
                    if needs(s) {
                        let dot: f64 = d.data().iter().zip(nodes[a.0].value.data()).map(|(x, y)| x * y).sum();
                        accumulate(&mut grads[s.0], Tensor::scalar(dot));
                    }
                    if needs(a) {
                        accumulate(&mut grads[a.0], kernel::scale(&d, nodes[s.0].value.item()));
                    }
                }
                Op::Scale(a, s) => accumulate(&mut grads[a.0], kernel::scale(&d, *s)),
                Op::Shift(a) => accumulate(&mut grads[a.0], d),
                Op::Relu(a) => {
                    let x = &nodes[a.0].value;
                    let g = kernel::zip("relu", &d, x, |g, v| if v > 0.0 { g } else { 0.0 })?;
                    accumulate(&mut grads[a.0], g);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut g = d.clone();
                    for (grow, yrow) in g.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                        for (gv, yv) in grow.iter_mut().zip(yrow) {
                            *gv = yv * (*gv - dot);
                        }
                    }
                    accumulate(&mut grads[a.0], g);
                }
                Op::Standardize {
                    input,
                    normed,
                    inv_std,
                } => {
                    let (m, c) = (normed.rows(), normed.cols());
                    let mut sum_d = vec![0.0; c];
                    let mut sum_dx = vec![0.0; c];
                    for (drow, xrow) in d.data().chunks(c).zip(normed.data().chunks(c)) {
                        for j in 0..c {
                            sum_d[j] += drow[j];
                            sum_dx[j] += drow[j] * xrow[j];
                        }
                    }
                    let mf = m as f64;
                    let mut g = d.clone();
                    for (grow, xrow) in g.data_mut().chunks_mut(c).zip(normed.data().chunks(c)) {
                        for j in 0..c {
                            grow[j] = inv_std[j] * (grow[j] - sum_d[j] / mf - xrow[j] * sum_dx[j] / mf);
                        }
                    }
                    accumulate(&mut grads[input.0], g);
                }
                Op::NormalizeFrozen { input, std } => {
                    let inv = std.map(|s| 1.0 / s);
                    accumulate(&mut grads[input.0], kernel::mul_row(&d, &inv)?);
                }
                Op::Combine { weights, items } => {
                    let w = &nodes[weights.0].value;
                    if needs(weights) {
                        let gw: Vec<f64> = items
                            .iter()
                            .map(|it| d.data().iter().zip(nodes[it.0].value.data()).map(|(x, y)| x * y).sum())
                            .collect();
                        let mut gw = Tensor::row(gw);
                        gw = gw.reshape(w.shape())?;
                        accumulate(&mut grads[weights.0], gw);
                    }
                    for (k, it) in items.iter().enumerate() {
                        if needs(it) {
                            accumulate(&mut grads[it.0], kernel::scale(&d, w.data()[k]));
                        }
                    }
                }
                Op::Sum(a) => {
                    let shape = nodes[a.0].value.shape().to_vec();
                    accumulate(&mut grads[a.0], Tensor::filled(&shape, d.item()));
                }
                Op::Mean(a) => {
                    let x = &nodes[a.0].value;
                    accumulate(&mut grads[a.0], Tensor::filled(x.shape(), d.item() / x.len() as f64));
                }
                Op::Slice { input, start } => {
                    let mut g = Tensor::zeros(nodes[input.0].value.shape());
                    g.data_mut()[*start..*start + d.len()].copy_from_slice(d.data());
                    accumulate(&mut grads[input.0], g);
                }
                Op::Reshape(a) => {
                    let g = d.reshape(nodes[a.0].value.shape())?;
                    accumulate(&mut grads[a.0], g);
                }
                Op::SquaredDistance(a, b) => {
                    let s = 2.0 * d.item();
                    let diff = kernel::sub(&nodes[a.0].value, &nodes[b.0].value)?;
                    if needs(a) {
                        accumulate(&mut grads[a.0], kernel::scale(&diff, s));
                    }
                    if needs(b) {
                        accumulate(&mut grads[b.0], kernel::scale(&diff, -s));
                    }
                }
                Op::Mse(p, t) => {
                    let x = &nodes[p.0].value;
                    let s = 2.0 * d.item() / x.len() as f64;
                    let diff = kernel::sub(x, &nodes[t.0].value)?;
                    if needs(p) {
                        accumulate(&mut grads[p.0], kernel::scale(&diff, s));
                    }
                    if needs(t) {
                        accumulate(&mut grads[t.0], kernel::scale(&diff, -s));
                    }
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        // Only leaves keep their adjoint; interior slots were consumed above.
        Ok(Gradients { grads, shapes })
    }
}

/// Builds a graph over `params`, evaluates it and returns the scalar value
/// together with the gradient for every parameter.
pub fn forward_backward<F>(params: &[Tensor], build: F) -> Result<(f64, Vec<Tensor>)>
where
    F: FnOnce(&Graph, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&g, &vars)?;
    let grads = g.backward(loss)?;
    let value = g.item(loss);
    Ok((value, vars.iter().map(|&v| grads.wrt(v)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_derivative_two_x() {
        let (value, grads) = forward_backward(&[Tensor::scalar(3.0)], |g, p| g.mul(p[0], p[0])).unwrap();
        assert_eq!(value, 9.0);
        assert_eq!(grads[0].item(), 6.0);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let (value, grads) = forward_backward(&[Tensor::row(vec![1.0, 2.0])], |g, _| Ok(g.scalar(5.0))).unwrap();
        assert_eq!(value, 5.0);
        assert!(grads[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let r = forward_backward(&[Tensor::row(vec![1.0, 2.0])], |_, p| Ok(p[0]));
        assert!(matches!(r, Err(Error::Shape { .. })));
    }

    #[test]
    fn non_finite_intermediate_names_the_op() {
        let r = forward_backward(&[Tensor::scalar(1e200)], |g, p| {
            let sq = g.mul(p[0], p[0])?;
            g.sum(sq)
        });
        assert_eq!(r.unwrap_err(), Error::NonFinite { op: "mul" });
    }

    #[test]
    fn combine_matches_manual_mix() {
        let g = Graph::new();
        let w = g.constant(Tensor::row(vec![0.0, 1.0, 0.0]));
        let ys: Vec<Var> = (0..3).map(|k| g.constant(Tensor::row(vec![k as f64 + 0.5, -1.25]))).collect();
        let out = g.combine(w, &ys).unwrap();
        assert_eq!(g.value(out), g.value(ys[1]));
    }
}
