//! Reverse-mode tape.
//!
//! Nodes are appended in execution order, and an op may only reference
//! earlier nodes. The node list is therefore already a topological order and
//! backward is a single reverse sweep.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::conv::{conv_out_size, conv_transpose_out_size, Conv2dOpts, ConvTransposeOpts, Plane};
use super::pool::{Pool2d, PoolMode};
use super::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::real::{matmul, MatRef, Real};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch normalization statistics source.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a, T> {
    /// Normalize with the batch statistics over `N, H, W`.
    Train { eps: T },
    /// Normalize with stored running statistics.
    Infer { eps: T, mean: &'a [T], var: &'a [T] },
}

/// Per-channel batch statistics observed in train mode; `var` is unbiased.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var, opts: Conv2dOpts },
    ConvTranspose2d { input: Var, kernel: Var, bias: Var, opts: ConvTransposeOpts },
    Pool { input: Var, cfg: Pool2d, argmax: Vec<usize> },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Relu(Var),
    Add(Var, Var),
    Concat(Vec<Var>),
    Softmax(Var),
    CrossEntropy { logits: Var, target: Vec<u8>, probs: Vec<T> },
    Sum(Var),
    WeightedSum { input: Var, weights: Vec<T> },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Conv2d { input, kernel, bias, .. } | Op::ConvTranspose2d { input, kernel, bias, .. } => {
                vec![*input, *kernel, *bias]
            }
            Op::BatchNorm { input, gamma, beta, .. } => vec![*input, *gamma, *beta],
            Op::Pool { input, .. }
            | Op::Relu(input)
            | Op::Softmax(input)
            | Op::Sum(input)
            | Op::WeightedSum { input, .. } => vec![*input],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Add(a, b) => vec![*a, *b],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of executed ops; confined to one thread while being built.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check_finite<T: Real>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        check_finite(op_name, value.data())?;
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Cross-correlation of `input [N,C,H,W]` with `kernel [K,C,kh,kw]` plus
    /// `bias [K]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, opts: Conv2dOpts) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("conv2d")?;
        let [k, kc, kh, kw] = self.value(kernel).dims4("conv2d")?;
        if kc != c {
            return Err(shape_err("conv2d", format!("input has {c} channels, kernel expects {kc}")));
        }
        if self.value(bias).shape() != [k] {
            return Err(shape_err("conv2d", format!("bias shape {:?} != [{k}]", self.value(bias).shape())));
        }
        let (ho, wo) = match (conv_out_size(h, kh, opts), conv_out_size(w, kw, opts)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::EmptyOutput { op: "conv2d", input: x.shape().to_vec() }),
        };
        let plane = Plane {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            out_h: ho,
            out_w: wo,
            stride: opts.stride,
            dilation: opts.dilation,
            padding: opts.padding,
        };
        let (rows, cols) = (plane.col_rows(), plane.col_cols());
        let kern = self.value(kernel).data();
        let b = self.value(bias).data();
        let mut out = vec![T::zero(); n * k * cols];
        let mut col = vec![T::zero(); rows * cols];
        for i in 0..n {
            plane.im2col(&x.data()[i * c * h * w..(i + 1) * c * h * w], &mut col);
            let dst = &mut out[i * k * cols..(i + 1) * k * cols];
            for (ch, chunk) in dst.chunks_exact_mut(cols).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b[ch]);
            }
            matmul(MatRef::new(kern, k, rows), MatRef::new(&col, rows, cols), dst, true);
        }
        let value = Tensor::new([n, k, ho, wo], out)?;
        self.push("conv2d", value, Op::Conv2d { input, kernel, bias, opts })
    }

    /// Transposed convolution: `input [N,C,H,W]`, `kernel [C,K,kh,kw]`,
    /// `bias [K]`. The forward pass is the input-gradient of [`Graph::conv2d`]
    /// with the same geometry.
    pub fn conv_transpose2d(&mut self, input: Var, kernel: Var, bias: Var, opts: ConvTransposeOpts) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("conv_transpose2d")?;
        let [kc, k, kh, kw] = self.value(kernel).dims4("conv_transpose2d")?;
        if kc != c {
            return Err(shape_err("conv_transpose2d", format!("input has {c} channels, kernel expects {kc}")));
        }
        if self.value(bias).shape() != [k] {
            return Err(shape_err("conv_transpose2d", "bias length differs from output channels"));
        }
        let (ho, wo) = match (conv_transpose_out_size(h, kh, opts), conv_transpose_out_size(w, kw, opts)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::EmptyOutput { op: "conv_transpose2d", input: x.shape().to_vec() }),
        };
        let plane = transpose_plane(k, ho, wo, kh, kw, h, w, opts);
        let (rows, cols) = (plane.col_rows(), plane.col_cols());
        let kern = self.value(kernel).data();
        let b = self.value(bias).data();
        let mut out = vec![T::zero(); n * k * ho * wo];
        let mut col = vec![T::zero(); rows * cols];
        for i in 0..n {
            let xi = &x.data()[i * c * cols..(i + 1) * c * cols];
            matmul(MatRef::new(kern, c, rows).t(), MatRef::new(xi, c, cols), &mut col, false);
            let dst = &mut out[i * k * ho * wo..(i + 1) * k * ho * wo];
            for (ch, chunk) in dst.chunks_exact_mut(ho * wo).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b[ch]);
            }
            plane.col2im(&col, dst);
        }
        let value = Tensor::new([n, k, ho, wo], out)?;
        self.push("conv_transpose2d", value, Op::ConvTranspose2d { input, kernel, bias, opts })
    }

    pub fn pool2d(&mut self, input: Var, cfg: Pool2d) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("pool2d")?;
        let (ho, wo) = cfg.out_size(h, w)?;
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::new();
        let data = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let (y0, y1, x0, x1) = cfg.window(oy, ox, h, w);
                    match cfg.mode {
                        PoolMode::Max => {
                            let mut best = base + y0 * w + x0;
                            for yy in y0..y1 {
                                for xx in x0..x1 {
                                    let idx = base + yy * w + xx;
                                    if data[idx] > data[best] {
                                        best = idx;
                                    }
                                }
                            }
                            argmax.push(best);
                            out.push(data[best]);
                        }
                        PoolMode::Avg => {
                            let mut acc = T::zero();
                            for yy in y0..y1 {
                                for xx in x0..x1 {
                                    acc = acc + data[base + yy * w + xx];
                                }
                            }
                            out.push(acc / T::from_f64(((y1 - y0) * (x1 - x0)) as f64));
                        }
                    }
                }
            }
        }
        let value = Tensor::new([n, c, ho, wo], out)?;
        self.push("pool2d", value, Op::Pool { input, cfg, argmax })
    }

    /// Per-channel batch normalization with affine `gamma`, `beta`. In train
    /// mode the batch statistics are returned so the caller can update its
    /// running averages.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("batch_norm")?;
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        if g.len() != c || b.len() != c {
            return Err(shape_err("batch_norm", format!("gamma/beta must have {c} entries")));
        }
        let hw = h * w;
        let m = n * hw;
        let data = x.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let (eps, train) = match mode {
            BnMode::Train { eps } => {
                if m < 2 {
                    return Err(Error::Invalid(format!("batch_norm train mode needs N*H*W >= 2, got {m}")));
                }
                let inv_m = T::one() / T::from_f64(m as f64);
                for ch in 0..c {
                    let mut s = T::zero();
                    for i in 0..n {
                        s = s + data[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().copied().sum::<T>();
                    }
                    let mu = s * inv_m;
                    let mut sq = T::zero();
                    for i in 0..n {
                        for &v in &data[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                            sq = sq + (v - mu) * (v - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = sq * inv_m;
                }
                (eps, true)
            }
            BnMode::Infer { eps, mean: rm, var: rv } => {
                if rm.len() != c || rv.len() != c {
                    return Err(shape_err("batch_norm", "running statistics length differs from channels"));
                }
                mean.copy_from_slice(rm);
                var.copy_from_slice(rv);
                (eps, false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); data.len()];
        let mut out = vec![T::zero(); data.len()];
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    let xh = (data[j] - mean[ch]) * inv_std[ch];
                    xhat[j] = xh;
                    out[j] = g[ch] * xh + b[ch];
                }
            }
        }
        let stats = train.then(|| {
            let unbias = T::from_f64(m as f64 / (m as f64 - 1.0));
            BatchStats { mean, var: var.iter().map(|&v| v * unbias).collect() }
        });
        let value = Tensor::new([n, c, h, w], out)?;
        let v = self.push("batch_norm", value, Op::BatchNorm { input, gamma, beta, xhat, inv_std, train })?;
        Ok((v, stats))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let out = x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        self.push("relu", value, Op::Relu(input))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        self.push("add", value, Op::Add(a, b))
    }

    /// Concatenate 4-D tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_channels"))?;
        let [n, _, h, w] = self.value(*first).dims4("concat_channels")?;
        let mut total = 0;
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).dims4("concat_channels")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(shape_err("concat_channels", "batch or spatial dims differ"));
            }
            total += pc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for i in 0..n {
            for &p in parts {
                let t = self.value(p);
                let pc = t.shape()[1];
                out.extend_from_slice(&t.data()[i * pc * hw..(i + 1) * pc * hw]);
            }
        }
        let value = Tensor::new([n, total, h, w], out)?;
        self.push("concat_channels", value, Op::Concat(parts.to_vec()))
    }

    /// Softmax over the channel axis of an `N,C,H,W` map, evaluated with the
    /// per-pixel maximum subtracted.
    pub fn softmax_channels(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("softmax_channels")?;
        let value = Tensor::new([n, c, h, w], softmax_planes(x.data(), n, c, h * w))?;
        self.push("softmax_channels", value, Op::Softmax(input))
    }

    /// Mean over pixels of `-log softmax(logits)[target]`. `target` holds one
    /// class index per pixel in `N,H,W` order.
    pub fn cross_entropy(&mut self, logits: Var, target: &[u8]) -> Result<Var> {
        let x = self.value(logits);
        let [n, c, h, w] = x.dims4("cross_entropy")?;
        let hw = h * w;
        if target.len() != n * hw {
            return Err(shape_err("cross_entropy", format!("target has {} pixels, logits {}", target.len(), n * hw)));
        }
        if target.iter().any(|&t| t as usize >= c) {
            return Err(Error::Invalid(format!("cross_entropy target class out of range 0..{c}")));
        }
        let probs = softmax_planes(x.data(), n, c, hw);
        let data = x.data();
        let mut total = 0.0f64;
        for i in 0..n {
            for p in 0..hw {
                let at = |ch: usize| data[(i * c + ch) * hw + p];
                let mx = (0..c).map(at).fold(T::neg_infinity(), T::max);
                let lse = mx + (0..c).map(|ch| (at(ch) - mx).exp()).sum::<T>().ln();
                total += (lse - at(target[i * hw + p] as usize)).as_f64();
            }
        }
        let loss = T::from_f64(total / (n * hw) as f64);
        let value = Tensor::scalar(loss);
        self.push("cross_entropy", value, Op::CrossEntropy { logits, target: target.to_vec(), probs })
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(input))
    }

    /// `sum(input * weights)` with constant weights; a generic scalar probe
    /// for gradient checks.
    pub fn weighted_sum(&mut self, input: Var, weights: &Tensor<T>) -> Result<Var> {
        let x = self.value(input);
        if x.shape() != weights.shape() {
            return Err(shape_err("weighted_sum", format!("{:?} vs {:?}", x.shape(), weights.shape())));
        }
        let s = x.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        let op = Op::WeightedSum { input, weights: weights.data().to_vec() };
        self.push("weighted_sum", Tensor::scalar(s), op)
    }

    /// Reverse sweep from a scalar `loss`. Every `requires_grad` leaf gets a
    /// gradient, zero when it does not influence the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if node.op.inputs().iter().any(|v| v.0 >= idx) {
                return Err(Error::Cycle(idx));
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.backprop(node, &gy, &mut grads)?;
        }
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => Some(match g {
                    Some(data) => Tensor::new(node.value.shape().to_vec(), data),
                    None => Ok(Tensor::zeros(node.value.shape().to_vec())),
                }),
                _ => None,
            })
            .map(Option::transpose)
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            let target = &self.nodes[v.0];
            if !target.requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); target.value.numel()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Relu(input) => {
                let x = self.value(*input).data();
                acc(*input, &mut |g| {
                    for ((gi, &xi), &gyi) in g.iter_mut().zip(x).zip(gy) {
                        if xi > T::zero() {
                            *gi = *gi + gyi;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |g| g.iter_mut().zip(gy).for_each(|(gi, &d)| *gi = *gi + d));
                }
            }
            Op::Sum(input) => acc(*input, &mut |g| g.iter_mut().for_each(|gi| *gi = *gi + gy[0])),
            Op::WeightedSum { input, weights } => acc(*input, &mut |g| {
                g.iter_mut().zip(weights).for_each(|(gi, &wi)| *gi = *gi + gy[0] * wi)
            }),
            Op::Concat(parts) => {
                let [n, total, h, w] = node.value.dims4("concat_channels")?;
                let hw = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).shape()[1];
                    acc(p, &mut |g| {
                        for i in 0..n {
                            let src = &gy[(i * total + offset) * hw..(i * total + offset + pc) * hw];
                            let dst = &mut g[i * pc * hw..(i + 1) * pc * hw];
                            dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
                        }
                    });
                    offset += pc;
                }
            }
            Op::Softmax(input) => {
                let [n, c, h, w] = node.value.dims4("softmax_channels")?;
                let hw = h * w;
                let p = node.value.data();
                acc(*input, &mut |g| {
                    for i in 0..n {
                        for px in 0..hw {
                            let at = |ch: usize| (i * c + ch) * hw + px;
                            let dot: T = (0..c).map(|ch| gy[at(ch)] * p[at(ch)]).sum();
                            for ch in 0..c {
                                g[at(ch)] = g[at(ch)] + p[at(ch)] * (gy[at(ch)] - dot);
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, target, probs } => {
                let [n, c, h, w] = self.value(*logits).dims4("cross_entropy")?;
                let hw = h * w;
                let scale = gy[0] / T::from_f64((n * hw) as f64);
                acc(*logits, &mut |g| {
                    for i in 0..n {
                        for px in 0..hw {
                            let t = target[i * hw + px] as usize;
                            for ch in 0..c {
                                let j = (i * c + ch) * hw + px;
                                let onehot = if ch == t { T::one() } else { T::zero() };
                                g[j] = g[j] + (probs[j] - onehot) * scale;
                            }
                        }
                    }
                });
            }
            Op::Pool { input, cfg, argmax } => {
                let x = self.value(*input);
                let [n, c, h, w] = x.dims4("pool2d")?;
                let [_, _, ho, wo] = node.value.dims4("pool2d")?;
                acc(*input, &mut |g| match cfg.mode {
                    PoolMode::Max => {
                        for (&src, &d) in argmax.iter().zip(gy) {
                            g[src] = g[src] + d;
                        }
                    }
                    PoolMode::Avg => {
                        for plane in 0..n * c {
                            for oy in 0..ho {
                                for ox in 0..wo {
                                    let (y0, y1, x0, x1) = cfg.window(oy, ox, h, w);
                                    let share = gy[(plane * ho + oy) * wo + ox]
                                        / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                                    for yy in y0..y1 {
                                        for xx in x0..x1 {
                                            let j = plane * h * w + yy * w + xx;
                                            g[j] = g[j] + share;
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, train } => {
                let [n, c, h, w] = node.value.dims4("batch_norm")?;
                let hw = h * w;
                let m = T::from_f64((n * hw) as f64);
                let gam = self.value(*gamma).data();
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for i in 0..n {
                    for ch in 0..c {
                        let off = (i * c + ch) * hw;
                        for j in off..off + hw {
                            sum_dy[ch] = sum_dy[ch] + gy[j];
                            sum_dy_xhat[ch] = sum_dy_xhat[ch] + gy[j] * xhat[j];
                        }
                    }
                }
                acc(*gamma, &mut |g| g.iter_mut().zip(&sum_dy_xhat).for_each(|(gi, &s)| *gi = *gi + s));
                acc(*beta, &mut |g| g.iter_mut().zip(&sum_dy).for_each(|(gi, &s)| *gi = *gi + s));
                acc(*input, &mut |g| {
                    for i in 0..n {
                        for ch in 0..c {
                            let off = (i * c + ch) * hw;
                            let k = gam[ch] * inv_std[ch];
                            for j in off..off + hw {
                                let d = if *train {
                                    k * (gy[j] - sum_dy[ch] / m - xhat[j] * sum_dy_xhat[ch] / m)
                                } else {
                                    k * gy[j]
                                };
                                g[j] = g[j] + d;
                            }
                        }
                    }
                });
            }
            Op::Conv2d { input, kernel, bias, opts } => {
                let x = self.value(*input);
                let kern = self.value(*kernel);
                let [n, c, h, w] = x.dims4("conv2d")?;
                let [k, _, kh, kw] = kern.dims4("conv2d")?;
                let [_, _, ho, wo] = node.value.dims4("conv2d")?;
                let plane = Plane {
                    channels: c,
                    height: h,
                    width: w,
                    kh,
                    kw,
                    out_h: ho,
                    out_w: wo,
                    stride: opts.stride,
                    dilation: opts.dilation,
                    padding: opts.padding,
                };
                let (rows, cols) = (plane.col_rows(), plane.col_cols());
                acc(*bias, &mut |g| {
                    for i in 0..n {
                        for (ch, gb) in g.iter_mut().enumerate() {
                            let s: T = gy[(i * k + ch) * cols..(i * k + ch + 1) * cols].iter().copied().sum();
                            *gb = *gb + s;
                        }
                    }
                });
                let mut col = vec![T::zero(); rows * cols];
                if self.nodes[kernel.0].requires_grad {
                    let mut gk = vec![T::zero(); k * rows];
                    for i in 0..n {
                        plane.im2col(&x.data()[i * c * h * w..(i + 1) * c * h * w], &mut col);
                        let gyi = &gy[i * k * cols..(i + 1) * k * cols];
                        matmul(MatRef::new(gyi, k, cols), MatRef::new(&col, rows, cols).t(), &mut gk, true);
                    }
                    acc(*kernel, &mut |g| g.iter_mut().zip(&gk).for_each(|(a, &b)| *a = *a + b));
                }
                acc(*input, &mut |g| {
                    for i in 0..n {
                        let gyi = &gy[i * k * cols..(i + 1) * k * cols];
                        matmul(MatRef::new(kern.data(), k, rows).t(), MatRef::new(gyi, k, cols), &mut col, false);
                        plane.col2im(&col, &mut g[i * c * h * w..(i + 1) * c * h * w]);
                    }
                });
            }
            Op::ConvTranspose2d { input, kernel, bias, opts } => {
                let x = self.value(*input);
                let kern = self.value(*kernel);
                let [n, c, h, w] = x.dims4("conv_transpose2d")?;
                let [_, k, kh, kw] = kern.dims4("conv_transpose2d")?;
                let [_, _, ho, wo] = node.value.dims4("conv_transpose2d")?;
                let plane = transpose_plane(k, ho, wo, kh, kw, h, w, *opts);
                let (rows, cols) = (plane.col_rows(), plane.col_cols());
                let out_plane = ho * wo;
                acc(*bias, &mut |g| {
                    for i in 0..n {
                        for (ch, gb) in g.iter_mut().enumerate() {
                            let s: T = gy[(i * k + ch) * out_plane..(i * k + ch + 1) * out_plane]
                                .iter()
                                .copied()
                                .sum();
                            *gb = *gb + s;
                        }
                    }
                });
                let need_k = self.nodes[kernel.0].requires_grad;
                let need_x = self.nodes[input.0].requires_grad;
                if !(need_k || need_x) {
                    return Ok(());
                }
                let mut col = vec![T::zero(); rows * cols];
                let mut gk = vec![T::zero(); if need_k { c * rows } else { 0 }];
                let mut gx = vec![T::zero(); if need_x { n * c * cols } else { 0 }];
                for i in 0..n {
                    plane.im2col(&gy[i * k * out_plane..(i + 1) * k * out_plane], &mut col);
                    if need_k {
                        let xi = &x.data()[i * c * cols..(i + 1) * c * cols];
                        matmul(MatRef::new(xi, c, cols), MatRef::new(&col, rows, cols).t(), &mut gk, true);
                    }
                    if need_x {
                        let dst = &mut gx[i * c * cols..(i + 1) * c * cols];
                        matmul(MatRef::new(kern.data(), c, rows), MatRef::new(&col, rows, cols), dst, false);
                    }
                }
                acc(*kernel, &mut |g| g.iter_mut().zip(&gk).for_each(|(a, &b)| *a = *a + b));
                acc(*input, &mut |g| g.iter_mut().zip(&gx).for_each(|(a, &b)| *a = *a + b));
            }
        }
        Ok(())
    }
}

/// Plane seen from the transposed convolution's output: the equivalent
/// forward convolution maps `out_h x out_w` back down to `h x w`.
#[allow(clippy::too_many_arguments)]
fn transpose_plane(
    channels: usize,
    out_h: usize,
    out_w: usize,
    kh: usize,
    kw: usize,
    h: usize,
    w: usize,
    opts: ConvTransposeOpts,
) -> Plane {
    Plane {
        channels,
        height: out_h,
        width: out_w,
        kh,
        kw,
        out_h: h,
        out_w: w,
        stride: opts.stride,
        dilation: 1,
        padding: opts.padding,
    }
}

fn softmax_planes<T: Real>(data: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for i in 0..n {
        for p in 0..hw {
            let at = |ch: usize| (i * c + ch) * hw + p;
            let mx = (0..c).map(|ch| data[at(ch)]).fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for ch in 0..c {
                let e = (data[at(ch)] - mx).exp();
                out[at(ch)] = e;
                denom = denom + e;
            }
            for ch in 0..c {
                out[at(ch)] = out[at(ch)] / denom;
            }
        }
    }
    out
}
