//! Reverse-mode differentiation over a per-sample tape.
//!
//! A [`Graph`] records every tensor produced during a forward pass together
//! with the operation that produced it. [`Graph::backward`] walks the tape in
//! reverse and returns the gradient of a scalar output with respect to every
//! node that requires one.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::losses::kernels as loss_kernels;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    GroupNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    AddScalar(Var),
    Add(Var, Var),
    Scale(Var, T),
    Concat(Var, Var),
    Resize(Var),
    Crop {
        input: Var,
        y0: usize,
        x0: usize,
    },
    Reshape(Var),
    Transpose(Var),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    SoftmaxRows(Var),
    Mean(Var),
    PartialBce {
        pred: Var,
        labels: Arc<[u8]>,
    },
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf (a parameter or an input under test).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Copies the value into a fresh constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let ishape = self.shape(input);
        let wshape = self.shape(weight);
        if ishape.len() != 3 || wshape.len() != 4 || wshape[2] != wshape[3] || wshape[1] != ishape[0] {
            return Err(Error::Shape(format!(
                "conv2d: input {ishape:?} incompatible with weight {wshape:?}"
            )));
        }
        if self.shape(bias) != [wshape[0]] {
            return Err(Error::Shape("conv2d: bias length must equal output channels".into()));
        }
        let geom = ConvGeom {
            c_in: ishape[0],
            c_out: wshape[0],
            h: ishape[1],
            w: ishape[2],
            k: wshape[2],
            stride,
            pad,
        };
        if geom.h + 2 * pad < geom.k || geom.w + 2 * pad < geom.k {
            return Err(Error::Shape("conv2d: kernel larger than padded input".into()));
        }
        let (ho, wo) = geom.out_hw();
        let mut out = Tensor::zeros(&[geom.c_out, ho, wo]);
        kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            out.data_mut(),
        );
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(out, Op::Conv2d { input, weight, bias, geom }, rg))
    }

    /// Group normalization of a `[C, H, W]` node with per-channel affine
    /// parameters `gamma`, `beta` of length `C`.
    pub fn group_norm(&mut self, input: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let s = self.shape(input);
        if s.len() != 3 || groups == 0 || s[0] % groups != 0 {
            return Err(Error::Shape(format!("group_norm: {s:?} with {groups} groups")));
        }
        let c = s[0];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Shape("group_norm: affine parameters must have length C".into()));
        }
        let mut out = Tensor::zeros(s);
        kernels::group_norm_forward(
            self.value(input).data(),
            c,
            groups,
            self.value(gamma).data(),
            self.value(beta).data(),
            out.data_mut(),
        );
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(out, Op::GroupNorm { input, gamma, beta, groups }, rg))
    }

    /// Adds a constant to every element.
    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v + s);
        let rg = self.rg(x);
        self.push(out, Op::AddScalar(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    /// Channel concatenation of two `[C, H, W]` tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[1..] != sb[1..] {
            return Err(Error::Shape(format!("concat: {sa:?} vs {sb:?}")));
        }
        let shape = [sa[0] + sb[0], sa[1], sa[2]];
        let mut data = Vec::with_capacity(shape.iter().product());
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let out = Tensor::from_vec(&shape, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Concat(a, b), rg))
    }

    /// Bilinear resize of the trailing two dims (`[H, W]` or `[C, H, W]`).
    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() < 2 || out_h == 0 || out_w == 0 {
            return Err(Error::Shape(format!("resize: {:?} -> {out_h}x{out_w}", t.shape())));
        }
        let (h, w) = t.hw();
        if (h, w) == (out_h, out_w) {
            return Ok(x);
        }
        let c = t.len() / (h * w);
        let mut shape = t.shape().to_vec();
        let n = shape.len();
        shape[n - 2] = out_h;
        shape[n - 1] = out_w;
        let mut out = Tensor::zeros(&shape);
        kernels::resize_forward(t.data(), c, (h, w), (out_h, out_w), out.data_mut());
        let rg = self.rg(x);
        Ok(self.push(out, Op::Resize(x), rg))
    }

    /// Rectangle `[y0, y0+h) × [x0, x0+w)` of the trailing two dims.
    pub fn crop(&mut self, x: Var, y0: usize, x0: usize, h: usize, w: usize) -> Result<Var> {
        let t = self.value(x);
        let (ih, iw) = t.hw();
        if h == 0 || w == 0 || y0 + h > ih || x0 + w > iw {
            return Err(Error::Shape(format!(
                "crop {h}x{w}+({y0},{x0}) outside {ih}x{iw}"
            )));
        }
        let out = crop_tensor(t, y0, x0, h, w);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Crop { input: x, y0, x0 }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(Error::Shape(format!("transpose needs 2-d, got {:?}", t.shape())));
        }
        let out = transpose2d(t);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul: {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n, out.data_mut());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a[m×k] · b[n×k]ᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::Shape(format!("matmul_bt: {sa:?} x {sb:?}ᵀ")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = Tensor::zeros(&[m, n]);
        kernels::matmul_bt_acc(self.value(a).data(), self.value(b).data(), m, k, n, out.data_mut());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulBt(a, b), rg))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(Error::Shape(format!("softmax_rows needs 2-d, got {:?}", t.shape())));
        }
        let cols = t.shape()[1];
        let mut out = Tensor::zeros(t.shape());
        kernels::softmax_rows(t.data(), cols, out.data_mut());
        let rg = self.rg(x);
        Ok(self.push(out, Op::SoftmaxRows(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(x);
        self.push(out, Op::Mean(x), rg)
    }

    /// Partial binary cross-entropy; see [`crate::losses::partial_bce`].
    pub fn partial_bce(&mut self, pred: Var, labels: Arc<[u8]>) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != labels.len() {
            return Err(Error::Shape(format!(
                "partial_bce: {} predictions vs {} labels",
                p.len(),
                labels.len()
            )));
        }
        let v = loss_kernels::partial_bce_value(p.data(), &labels)?;
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(v), Op::PartialBce { pred, labels }, rg))
    }

    /// Mean squared difference of two equally shaped tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Argument(format!(
                "mse: shape {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let v = loss_kernels::mse_value(self.value(a).data(), self.value(b).data());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(v), Op::Mse(a, b), rg))
    }

    /// Gradient of the scalar `output` with respect to every tracked node.
    pub fn backward(&self, output: Var) -> Grads<T> {
        let seed = Tensor::full(self.shape(output), T::one());
        self.backward_with(output, seed)
    }

    /// Reverse pass seeded with an explicit upstream gradient for `output`.
    pub fn backward_with(&self, output: Var, seed: Tensor<T>) -> Grads<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(output) {
            return Grads { grads };
        }
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom } => {
                let mut gi = self.rg(*input).then(|| take_or_zeros(grads, *input, self));
                let mut gw = self.rg(*weight).then(|| take_or_zeros(grads, *weight, self));
                let mut gb = self.rg(*bias).then(|| take_or_zeros(grads, *bias, self));
                kernels::conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g.data(),
                    gi.as_mut().map(|t| t.data_mut()),
                    gw.as_mut().map(|t| t.data_mut()),
                    gb.as_mut().map(|t| t.data_mut()),
                );
                restore(grads, *input, gi);
                restore(grads, *weight, gw);
                restore(grads, *bias, gb);
            }
            Op::GroupNorm { input, gamma, beta, groups } => {
                let c = self.shape(*input)[0];
                let mut gi = self.rg(*input).then(|| take_or_zeros(grads, *input, self));
                let mut gg = self.rg(*gamma).then(|| take_or_zeros(grads, *gamma, self));
                let mut gb = self.rg(*beta).then(|| take_or_zeros(grads, *beta, self));
                kernels::group_norm_backward(
                    self.value(*input).data(),
                    c,
                    *groups,
                    self.value(*gamma).data(),
                    g.data(),
                    gi.as_mut().map(|t| t.data_mut()),
                    gg.as_mut().map(|t| t.data_mut()),
                    gb.as_mut().map(|t| t.data_mut()),
                );
                restore(grads, *input, gi);
                restore(grads, *gamma, gg);
                restore(grads, *beta, gb);
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, |acc| add_into(acc, g.data())),
            Op::Relu(x) => self.accumulate(grads, *x, |acc| {
                for ((a, &gv), &y) in acc.iter_mut().zip(g.data()).zip(node.value.data()) {
                    if y > T::zero() {
                        *a += gv;
                    }
                }
            }),
            Op::Sigmoid(x) => self.accumulate(grads, *x, |acc| {
                for ((a, &gv), &y) in acc.iter_mut().zip(g.data()).zip(node.value.data()) {
                    *a += gv * y * (T::one() - y);
                }
            }),
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accumulate(grads, v, |acc| add_into(acc, g.data()));
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, |acc| {
                for (a, &gv) in acc.iter_mut().zip(g.data()) {
                    *a += gv * *s;
                }
            }),
            Op::Concat(a, b) => {
                let na = self.value(*a).len();
                self.accumulate(grads, *a, |acc| add_into(acc, &g.data()[..na]));
                self.accumulate(grads, *b, |acc| add_into(acc, &g.data()[na..]));
            }
            Op::Resize(x) => {
                let src = self.value(*x);
                let (h, w) = src.hw();
                let c = src.len() / (h * w);
                let out_hw = node.value.hw();
                self.accumulate(grads, *x, |acc| {
                    kernels::resize_backward(g.data(), c, (h, w), out_hw, acc)
                });
            }
            Op::Crop { input, y0, x0 } => {
                let src = self.value(*input);
                let (ih, iw) = src.hw();
                let c = src.len() / (ih * iw);
                let (h, w) = node.value.hw();
                self.accumulate(grads, *input, |acc| {
                    for ch in 0..c {
                        for y in 0..h {
                            let dst = ch * ih * iw + (y0 + y) * iw + x0;
                            let s = ch * h * w + y * w;
                            add_into(&mut acc[dst..dst + w], &g.data()[s..s + w]);
                        }
                    }
                });
            }
            Op::Reshape(x) => self.accumulate(grads, *x, |acc| add_into(acc, g.data())),
            Op::Transpose(x) => {
                let gt = transpose2d(g);
                self.accumulate(grads, *x, |acc| add_into(acc, gt.data()));
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                // dA = dC · Bᵀ ; dB = Aᵀ · dC
                self.accumulate(grads, *a, |acc| kernels::matmul_bt_acc(g.data(), bv, m, n, k, acc));
                self.accumulate(grads, *b, |acc| kernels::matmul_at_acc(av, g.data(), m, k, n, acc));
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                // C = A·Bᵀ: dA = dC · B ; dB = dCᵀ · A
                self.accumulate(grads, *a, |acc| {
                    let mut tmp = vec![T::zero(); m * k];
                    kernels::matmul(g.data(), bv, m, n, k, &mut tmp);
                    add_into(acc, &tmp);
                });
                self.accumulate(grads, *b, |acc| kernels::matmul_at_acc(g.data(), av, m, n, k, acc));
            }
            Op::SoftmaxRows(x) => {
                let cols = node.value.shape()[1];
                self.accumulate(grads, *x, |acc| {
                    kernels::softmax_rows_backward(node.value.data(), g.data(), cols, acc)
                });
            }
            Op::Mean(x) => {
                let n = T::of(self.value(*x).len() as f64);
                let gv = g.data()[0] / n;
                self.accumulate(grads, *x, |acc| {
                    for a in acc.iter_mut() {
                        *a += gv;
                    }
                });
            }
            Op::PartialBce { pred, labels } => {
                let upstream = g.data()[0];
                self.accumulate(grads, *pred, |acc| {
                    loss_kernels::partial_bce_grad_acc(self.value(*pred).data(), labels, upstream, acc)
                });
            }
            Op::Mse(a, b) => {
                let upstream = g.data()[0];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |acc| loss_kernels::mse_grad_acc(av, bv, upstream, acc));
                self.accumulate(grads, *b, |acc| loss_kernels::mse_grad_acc(bv, av, upstream, acc));
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.shape(v)));
        f(slot.data_mut());
    }
}

fn take_or_zeros<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: &Graph<T>) -> Tensor<T> {
    grads[v.0].take().unwrap_or_else(|| Tensor::zeros(g.shape(v)))
}

fn restore<T>(grads: &mut [Option<Tensor<T>>], v: Var, t: Option<Tensor<T>>) {
    if let Some(t) = t {
        grads[v.0] = Some(t);
    }
}

fn add_into<T: Scalar>(acc: &mut [T], g: &[T]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

pub(crate) fn transpose2d<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::from_vec(&[c, r], out).expect("transpose preserves size")
}

pub(crate) fn crop_tensor<T: Scalar>(t: &Tensor<T>, y0: usize, x0: usize, h: usize, w: usize) -> Tensor<T> {
    let (ih, iw) = t.hw();
    let c = t.len() / (ih * iw);
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let s = ch * ih * iw + (y0 + y) * iw + x0;
            data.extend_from_slice(&t.data()[s..s + w]);
        }
    }
    let mut shape = t.shape().to_vec();
    let n = shape.len();
    shape[n - 2] = h;
    shape[n - 1] = w;
    Tensor::from_vec(&shape, data).expect("crop size")
}

/// Bilinear resize of a plain tensor's trailing two dims.
pub fn resize_tensor<T: Scalar>(t: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (h, w) = t.hw();
    if (h, w) == (out_h, out_w) {
        return t.clone();
    }
    let c = t.len() / (h * w);
    let mut shape = t.shape().to_vec();
    let n = shape.len();
    shape[n - 2] = out_h;
    shape[n - 1] = out_w;
    let mut out = Tensor::zeros(&shape);
    kernels::resize_forward(t.data(), c, (h, w), (out_h, out_w), out.data_mut());
    out
}
