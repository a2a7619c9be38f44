//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as it executes, holding the forward
//! value of each node. [`Tape::backward`] then walks the recording once in
//! reverse, producing gradients for every node that requires them. Tapes
//! are cheap to build and are rebuilt from scratch for every training step.
//!
//! The op set is exactly what the models in this crate need; each op states
//! its own shape contract and fails fast on violation.

use crate::conv::{self, ConvGeom, Padding};
use crate::error::{Error, Result};
use crate::tensor::{matmul, Scalar, Tensor};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that
/// created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<S: Scalar> {
    Leaf,
    Matmul(Var, Var),
    Conv2d {
        x: Var,
        k: Var,
        geom: ConvGeom,
    },
    /// `geom` describes the underlying forward convolution whose input
    /// gradient realizes this op, so `x` has the geometry's output shape.
    Conv2dTranspose {
        x: Var,
        k: Var,
        geom: ConvGeom,
    },
    AddBias {
        x: Var,
        b: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale {
        x: Var,
        c: S,
    },
    AddConst(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp {
        x: Var,
        lo: S,
        hi: S,
    },
    SumAll(Var),
    Reshape(Var),
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients<S: Scalar> {
    by_node: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss with respect to `v`, or None when the loss does
    /// not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.by_node[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.by_node[v.0].take()
    }
}

pub struct Tape<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Constant leaf: data the loss is never differentiated against.
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf: backward produces a gradient for it.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        debug_assert!(
            value.is_finite(),
            "non-finite forward value at node {}",
            self.nodes.len()
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul(self.value(a), self.value(b))?;
        let rg = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(value, Op::Matmul(a, b), rg))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, padding: Padding) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(k), stride, padding)?;
        let out = conv::conv2d_forward(self.value(x).data(), self.value(k).data(), &geom);
        let value = Tensor::new(geom.output_shape(), out)?;
        let rg = self.needs_grad(x) || self.needs_grad(k);
        Ok(self.push(value, Op::Conv2d { x, k, geom }, rg))
    }

    /// Transposed convolution with same padding: maps [b, h, w, ci] to
    /// [b, h*stride, w*stride, co]. The kernel is laid out [kh, kw, co, ci],
    /// mirroring the convolution it inverts.
    pub fn conv2d_transpose(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(Error::Shape(format!(
                "conv2d_transpose input must be [batch, h, w, channels], got {xs:?}"
            )));
        }
        let ks = self.shape(k);
        if ks.len() != 4 {
            return Err(Error::Shape(format!(
                "conv2d_transpose kernel must be [kh, kw, co, ci], got {ks:?}"
            )));
        }
        let big = [xs[0], xs[1] * stride, xs[2] * stride, ks[2]];
        let geom = ConvGeom::new(&big, ks, stride, Padding::Same)?;
        if geom.output_shape() != xs {
            return Err(Error::Shape(format!(
                "conv2d_transpose input {xs:?} does not match the stride-{stride} image it should upsample from (expected {:?})",
                geom.output_shape()
            )));
        }
        if ks[3] != xs[3] {
            return Err(Error::Shape(format!(
                "channel mismatch: conv2d_transpose input {xs:?} has {} channels, kernel {ks:?} expects {}",
                xs[3], ks[3]
            )));
        }
        let out = conv::conv2d_grad_input(self.value(x).data(), self.value(k).data(), &geom);
        let value = Tensor::new(geom.input_shape(), out)?;
        let rg = self.needs_grad(x) || self.needs_grad(k);
        Ok(self.push(value, Op::Conv2dTranspose { x, k, geom }, rg))
    }

    /// Adds a 1-D bias along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let bs = self.shape(b);
        if bs.len() != 1 || xs.is_empty() || *xs.last().unwrap() != bs[0] {
            return Err(Error::Shape(format!(
                "bias of shape {bs:?} does not broadcast over the last axis of {xs:?}"
            )));
        }
        let n = bs[0];
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(n) {
            for (o, &bv) in row.iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        let rg = self.needs_grad(x) || self.needs_grad(b);
        Ok(self.push(out, Op::AddBias { x, b }, rg))
    }

    fn binary_value(&self, a: Var, b: Var, name: &str, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::new(ta.shape().to_vec(), data)
        } else if tb.numel() == 1 {
            let s = tb.data()[0];
            Ok(ta.map(|x| f(x, s)))
        } else if ta.numel() == 1 {
            let s = ta.data()[0];
            Ok(tb.map(|y| f(s, y)))
        } else {
            Err(Error::Shape(format!(
                "{name} needs equal shapes or a scalar operand, got {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary_value(a, b, "add", |x, y| x + y)?;
        let rg = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary_value(a, b, "sub", |x, y| x - y)?;
        let rg = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary_value(a, b, "mul", |x, y| x * y)?;
        let rg = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let value = self.value(x).map(|v| v * c);
        let rg = self.needs_grad(x);
        self.push(value, Op::Scale { x, c }, rg)
    }

    pub fn add_const(&mut self, x: Var, c: S) -> Var {
        let value = self.value(x).map(|v| v + c);
        let rg = self.needs_grad(x);
        self.push(value, Op::AddConst(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .map(|v| if v > S::zero() { v } else { S::zero() });
        let rg = self.needs_grad(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Numerically stable logistic sigmoid; branches on sign so exp never
    /// overflows.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(stable_sigmoid);
        let rg = self.needs_grad(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.exp());
        let rg = self.needs_grad(x);
        self.push(value, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= S::zero()) {
            return Err(Error::Domain(
                "log requires strictly positive inputs".into(),
            ));
        }
        let value = self.value(x).map(|v| v.ln());
        let rg = self.needs_grad(x);
        Ok(self.push(value, Op::Log(x), rg))
    }

    pub fn clamp(&mut self, x: Var, lo: S, hi: S) -> Var {
        let value = self.value(x).map(|v| {
            if v < lo {
                lo
            } else if v > hi {
                hi
            } else {
                v
            }
        });
        let rg = self.needs_grad(x);
        self.push(value, Op::Clamp { x, lo, hi }, rg)
    }

    /// Sum of every element, returned as a one-element tensor. Accumulates
    /// in f64 regardless of `S` so the reduction order never matters.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let total = S::from_f64(self.value(x).sum_f64());
        let value = Tensor::scalar(total);
        let rg = self.needs_grad(x);
        self.push(value, Op::SumAll(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.needs_grad(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Columns [start, start+len) of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 {
            return Err(Error::Shape(format!(
                "slice_cols needs a 2-D tensor, got {xs:?}"
            )));
        }
        let (rows, cols) = (xs[0], xs[1]);
        if start + len > cols {
            return Err(Error::Shape(format!(
                "column slice {start}..{} out of range for {xs:?}",
                start + len
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let value = Tensor::new(vec![rows, len], out)?;
        let rg = self.needs_grad(x);
        Ok(self.push(value, Op::SliceCols { x, start, len }, rg))
    }

    /// Mean cross-entropy between softmax(logits) and integer labels, fused
    /// for stability via log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits);
        if ls.len() != 2 {
            return Err(Error::Shape(format!(
                "softmax_cross_entropy needs [batch, classes] logits, got {ls:?}"
            )));
        }
        let (rows, classes) = (ls[0], ls[1]);
        if labels.len() != rows {
            return Err(Error::Shape(format!(
                "{} labels for {rows} logit rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let data = self.value(logits).data();
        let mut total = 0.0f64;
        for (r, &label) in labels.iter().enumerate() {
            let row = &data[r * classes..(r + 1) * classes];
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut sum = 0.0f64;
            for &v in row {
                sum += (v - max).to_f64().exp();
            }
            total += sum.ln() + max.to_f64() - row[label].to_f64();
        }
        let value = Tensor::scalar(S::from_f64(total / rows as f64));
        let rg = self.needs_grad(logits);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar loss. Returns one gradient per reachable
    /// node that requires it.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward starts from a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.needs_grad(loss) {
            grads[loss.0] = Some(Tensor::scalar(S::one()));
        }
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.apply_backward(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { by_node: grads })
    }

    fn apply_backward(
        &self,
        id: usize,
        g: &Tensor<S>,
        grads: &mut [Option<Tensor<S>>],
    ) -> Result<()> {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                if self.needs_grad(*a) {
                    let bt = self.value(*b).transposed()?;
                    accumulate(grads, *a, matmul(g, &bt)?)?;
                }
                if self.needs_grad(*b) {
                    let at = self.value(*a).transposed()?;
                    accumulate(grads, *b, matmul(&at, g)?)?;
                }
            }
            Op::Conv2d { x, k, geom } => {
                if self.needs_grad(*x) {
                    let gx = conv::conv2d_grad_input(g.data(), self.value(*k).data(), geom);
                    accumulate(grads, *x, Tensor::new(geom.input_shape(), gx)?)?;
                }
                if self.needs_grad(*k) {
                    let gk = conv::conv2d_grad_kernel(self.value(*x).data(), g.data(), geom);
                    accumulate(grads, *k, Tensor::new(geom.kernel_shape(), gk)?)?;
                }
            }
            Op::Conv2dTranspose { x, k, geom } => {
                // Forward was the underlying convolution's input gradient,
                // so the two directions swap roles here.
                if self.needs_grad(*x) {
                    let gx = conv::conv2d_forward(g.data(), self.value(*k).data(), geom);
                    accumulate(grads, *x, Tensor::new(geom.output_shape(), gx)?)?;
                }
                if self.needs_grad(*k) {
                    let gk = conv::conv2d_grad_kernel(g.data(), self.value(*x).data(), geom);
                    accumulate(grads, *k, Tensor::new(geom.kernel_shape(), gk)?)?;
                }
            }
            Op::AddBias { x, b } => {
                if self.needs_grad(*x) {
                    accumulate(grads, *x, g.clone())?;
                }
                if self.needs_grad(*b) {
                    let n = self.value(*b).numel();
                    let mut sums = vec![0.0f64; n];
                    for row in g.data().chunks_exact(n) {
                        for (s, &gv) in sums.iter_mut().zip(row) {
                            *s += gv.to_f64();
                        }
                    }
                    let gb = sums.into_iter().map(S::from_f64).collect();
                    accumulate(grads, *b, Tensor::new(vec![n], gb)?)?;
                }
            }
            Op::Add(a, b) => {
                self.binary_grad(grads, *a, g, false)?;
                self.binary_grad(grads, *b, g, false)?;
            }
            Op::Sub(a, b) => {
                self.binary_grad(grads, *a, g, false)?;
                self.binary_grad(grads, *b, g, true)?;
            }
            Op::Mul(a, b) => {
                if self.needs_grad(*a) {
                    let gb = self.scaled_by_other(g, *b);
                    self.binary_grad_tensor(grads, *a, gb)?;
                }
                if self.needs_grad(*b) {
                    let ga = self.scaled_by_other(g, *a);
                    self.binary_grad_tensor(grads, *b, ga)?;
                }
            }
            Op::Scale { x, c } => {
                if self.needs_grad(*x) {
                    accumulate(grads, *x, g.map(|v| v * *c))?;
                }
            }
            Op::AddConst(x) => {
                if self.needs_grad(*x) {
                    accumulate(grads, *x, g.clone())?;
                }
            }
            Op::Relu(x) => {
                if self.needs_grad(*x) {
                    let gx = elementwise(g, self.value(*x), |gv, xv| {
                        if xv > S::zero() {
                            gv
                        } else {
                            S::zero()
                        }
                    })?;
                    accumulate(grads, *x, gx)?;
                }
            }
            Op::Sigmoid(x) => {
                if self.needs_grad(*x) {
                    let y = &self.nodes[id].value;
                    let gx = elementwise(g, y, |gv, yv| gv * yv * (S::one() - yv))?;
                    accumulate(grads, *x, gx)?;
                }
            }
            Op::Exp(x) => {
                if self.needs_grad(*x) {
                    let y = &self.nodes[id].value;
                    let gx = elementwise(g, y, |gv, yv| gv * yv)?;
                    accumulate(grads, *x, gx)?;
                }
            }
            Op::Log(x) => {
                if self.needs_grad(*x) {
                    let gx = elementwise(g, self.value(*x), |gv, xv| gv / xv)?;
                    accumulate(grads, *x, gx)?;
                }
            }
            Op::Clamp { x, lo, hi } => {
                if self.needs_grad(*x) {
                    let (lo, hi) = (*lo, *hi);
                    let gx = elementwise(g, self.value(*x), |gv, xv| {
                        if xv >= lo && xv <= hi {
                            gv
                        } else {
                            S::zero()
                        }
                    })?;
                    accumulate(grads, *x, gx)?;
                }
            }
            Op::SumAll(x) => {
                if self.needs_grad(*x) {
                    let gv = g.data()[0];
                    let shape = self.shape(*x).to_vec();
                    accumulate(grads, *x, Tensor::full(shape, gv)?)?;
                }
            }
            Op::Reshape(x) => {
                if self.needs_grad(*x) {
                    let shape = self.shape(*x).to_vec();
                    accumulate(grads, *x, g.clone().reshaped(shape)?)?;
                }
            }
            Op::SliceCols { x, start, len } => {
                if self.needs_grad(*x) {
                    let xs = self.shape(*x);
                    let (rows, cols) = (xs[0], xs[1]);
                    let mut gx = vec![S::zero(); rows * cols];
                    for r in 0..rows {
                        let src = &g.data()[r * len..(r + 1) * len];
                        gx[r * cols + start..r * cols + start + len].copy_from_slice(src);
                    }
                    accumulate(grads, *x, Tensor::new(vec![rows, cols], gx)?)?;
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                if self.needs_grad(*logits) {
                    let ls = self.shape(*logits);
                    let (rows, classes) = (ls[0], ls[1]);
                    let data = self.value(*logits).data();
                    let scale = g.data()[0] / S::from_f64(rows as f64);
                    let mut gx = vec![S::zero(); rows * classes];
                    for (r, &label) in labels.iter().enumerate() {
                        let row = &data[r * classes..(r + 1) * classes];
                        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
                        let mut denom = 0.0f64;
                        for &v in row {
                            denom += (v - max).to_f64().exp();
                        }
                        let out = &mut gx[r * classes..(r + 1) * classes];
                        for (c, &v) in row.iter().enumerate() {
                            let p = S::from_f64((v - max).to_f64().exp() / denom);
                            let delta = if c == label { S::one() } else { S::zero() };
                            out[c] = (p - delta) * scale;
                        }
                    }
                    accumulate(grads, *logits, Tensor::new(vec![rows, classes], gx)?)?;
                }
            }
        }
        Ok(())
    }

    /// Upstream gradient times the other operand's value, still in the
    /// upstream's shape (handles the scalar-operand case of `mul`).
    fn scaled_by_other(&self, g: &Tensor<S>, other: Var) -> Tensor<S> {
        let o = self.value(other);
        if o.numel() == 1 {
            let s = o.data()[0];
            g.map(|v| v * s)
        } else if g.numel() == 1 {
            let s = g.data()[0];
            o.map(|v| v * s)
        } else {
            elementwise(g, o, |a, b| a * b).expect("mul operands already shape-checked")
        }
    }

    /// Routes an upstream gradient to one operand of add/sub, reducing to a
    /// scalar when that operand was a broadcast scalar.
    fn binary_grad(
        &self,
        grads: &mut [Option<Tensor<S>>],
        v: Var,
        g: &Tensor<S>,
        negate: bool,
    ) -> Result<()> {
        if !self.needs_grad(v) {
            return Ok(());
        }
        let contribution = if negate { g.map(|x| -x) } else { g.clone() };
        self.binary_grad_tensor(grads, v, contribution)
    }

    fn binary_grad_tensor(
        &self,
        grads: &mut [Option<Tensor<S>>],
        v: Var,
        contribution: Tensor<S>,
    ) -> Result<()> {
        if !self.needs_grad(v) {
            return Ok(());
        }
        let target = self.value(v);
        if target.numel() == 1 && contribution.numel() != 1 {
            let total = S::from_f64(contribution.sum_f64());
            let reduced = Tensor::new(target.shape().to_vec(), vec![total])?;
            accumulate(grads, v, reduced)
        } else {
            accumulate(grads, v, contribution)
        }
    }
}

#[inline]
fn stable_sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn elementwise<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    f: impl Fn(S, S) -> S,
) -> Result<Tensor<S>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "elementwise shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

fn accumulate<S: Scalar>(
    grads: &mut [Option<Tensor<S>>],
    v: Var,
    contribution: Tensor<S>,
) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => {
            if existing.shape() != contribution.shape() {
                return Err(Error::Shape(format!(
                    "gradient shapes differ at accumulation: {:?} vs {:?}",
                    existing.shape(),
                    contribution.shape()
                )));
            }
            for (e, &c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                *e += c;
            }
            Ok(())
        }
        slot @ None => {
            *slot = Some(contribution);
            Ok(())
        }
    }
}
