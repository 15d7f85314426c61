//! Reverse-mode differentiation over dense tensors.
//!
//! Every op appends a node holding its forward value to a [`Tape`]. Calling
//! [`Tape::backward`] walks the nodes in reverse execution order and
//! accumulates adjoints into the tracked leaves. Nodes that do not depend on
//! a tracked leaf are skipped, so constant inputs cost nothing on the way back.
//!
//! Tensors are laid out channel-first. Convolution-style ops take a single
//! sample shaped `[C, T, V]` (channels, frames, joints).

use rand::Rng;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Epsilon added to the variance in [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolAxis {
    Frames,
    Joints,
}

enum Op {
    Leaf,
    Reshape(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddChannelBias(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    TemporalConv {
        x: Var,
        w: Var,
    },
    DepthwiseTemporalConv {
        x: Var,
        w: Var,
    },
    MaxBroadcast {
        x: Var,
        axis: PoolAxis,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Concat(Vec<Var>),
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    visited: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Node indices whose backward rule ran, in the order they ran.
    pub fn visited(&self) -> &[usize] {
        &self.visited
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn dims3(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, f, j] => Ok((c, f, j)),
        _ => Err(Error::Shape {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![0, 0, 0],
        }),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient is tracked.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push_raw(value, op, needs_grad)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, alpha: f64) -> Var {
        let value = self.value(x).map(|v| v * alpha);
        self.push(value, Op::Scale(x, alpha), &[x])
    }

    /// Adds `bias[c]` to every element of channel `c` of `x: [C, ...]`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let c = tx.shape()[0];
        if tb.shape() != [c] {
            return Err(shape_err("add_channel_bias", tx, tb));
        }
        let per = tx.len() / c;
        let mut value = tx.clone();
        for (ch, chunk) in value.data_mut().chunks_mut(per).enumerate() {
            let b = tb.data()[ch];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        Ok(self.push(value, Op::AddChannelBias(x, bias), &[x, bias]))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = match (ta.shape(), tb.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            _ => return Err(shape_err("matmul", ta, tb)),
        };
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            ta.data(),
            k as isize,
            1,
            tb.data(),
            n as isize,
            1,
            0.0,
            &mut out,
            n as isize,
            1,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = match *tx.shape() {
            [r, c] => (r, c),
            _ => return Err(shape_err("transpose", tx, tx)),
        };
        let value = Tensor::new(vec![c, r], transpose_data(tx.data(), r, c))?;
        Ok(self.push(value, Op::Transpose(x), &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x), &[x])
    }

    /// Dense temporal convolution with a `k × 1` kernel and zero 'same'
    /// padding. `x: [C_in, T, V]`, `w: [C_out, C_in, k]` with odd `k`.
    pub fn temporal_conv(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (cin, t, v) = dims3("temporal_conv", tx)?;
        let (cout, k) = match *tw.shape() {
            [o, i, k] if i == cin && k % 2 == 1 => (o, k),
            _ => return Err(shape_err("temporal_conv", tx, tw)),
        };
        let mut out = vec![0.0; cout * t * v];
        let tv = (t * v) as isize;
        for d in 0..k {
            let Some((t0, t1, s)) = shifted_range(t, d, k) else {
                continue;
            };
            let cols = (t1 - t0) * v;
            let src = ((t0 as isize + s) as usize) * v;
            gemm(
                cout,
                cin,
                cols,
                1.0,
                &tw.data()[d..],
                (cin * k) as isize,
                k as isize,
                &tx.data()[src..],
                tv,
                1,
                1.0,
                &mut out[t0 * v..],
                tv,
                1,
            );
        }
        let value = Tensor::new(vec![cout, t, v], out)?;
        Ok(self.push(value, Op::TemporalConv { x, w }, &[x, w]))
    }

    /// Per-channel temporal convolution. `x: [C, T, V]`, `w: [C, k]`.
    pub fn depthwise_temporal_conv(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (c, t, v) = dims3("depthwise_temporal_conv", tx)?;
        let k = match *tw.shape() {
            [c2, k] if c2 == c && k % 2 == 1 => k,
            _ => return Err(shape_err("depthwise_temporal_conv", tx, tw)),
        };
        let pad = k / 2;
        let mut out = vec![0.0; c * t * v];
        let (xd, wd) = (tx.data(), tw.data());
        for ch in 0..c {
            let base = ch * t * v;
            for d in 0..k {
                let wv = wd[ch * k + d];
                for f in 0..t {
                    let src = f as isize + d as isize - pad as isize;
                    if src < 0 || src >= t as isize {
                        continue;
                    }
                    let so = base + src as usize * v;
                    let oo = base + f * v;
                    for j in 0..v {
                        out[oo + j] += wv * xd[so + j];
                    }
                }
            }
        }
        let value = Tensor::new(vec![c, t, v], out)?;
        Ok(self.push(value, Op::DepthwiseTemporalConv { x, w }, &[x, w]))
    }

    /// 1×1 convolution: mixes channels independently at every position.
    /// `x: [C_in, ...]`, `w: [C_out, C_in]`.
    pub fn pointwise_conv(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || ws[1] != xs[0] {
            return Err(shape_err("pointwise_conv", self.value(x), self.value(w)));
        }
        let rest: usize = xs[1..].iter().product();
        let flat = self.reshape(x, &[xs[0], rest])?;
        let mixed = self.matmul(w, flat)?;
        let mut out_shape = xs;
        out_shape[0] = ws[0];
        self.reshape(mixed, &out_shape)
    }

    /// Max over one axis of `[C, T, V]`, broadcast back over that axis.
    pub fn max_broadcast(&mut self, x: Var, axis: PoolAxis) -> Result<Var> {
        let tx = self.value(x);
        let (c, t, v) = dims3("max_broadcast", tx)?;
        let d = tx.data();
        let mut out = vec![0.0; d.len()];
        let mut argmax = Vec::new();
        match axis {
            PoolAxis::Frames => {
                argmax.reserve(c * v);
                for ch in 0..c {
                    for j in 0..v {
                        let mut best = ch * t * v + j;
                        for f in 1..t {
                            let idx = ch * t * v + f * v + j;
                            if d[idx] > d[best] {
                                best = idx;
                            }
                        }
                        for f in 0..t {
                            out[ch * t * v + f * v + j] = d[best];
                        }
                        argmax.push(best);
                    }
                }
            }
            PoolAxis::Joints => {
                argmax.reserve(c * t);
                for row in 0..c * t {
                    let slice = &d[row * v..(row + 1) * v];
                    let mut best = 0;
                    for j in 1..v {
                        if slice[j] > slice[best] {
                            best = j;
                        }
                    }
                    out[row * v..(row + 1) * v].fill(slice[best]);
                    argmax.push(row * v + best);
                }
            }
        }
        let value = Tensor::new(vec![c, t, v], out)?;
        Ok(self.push(value, Op::MaxBroadcast { x, axis, argmax }, &[x]))
    }

    /// Mean over every axis but the first: `[C, ...] -> [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let c = tx.shape()[0];
        let per = tx.len() / c;
        let data = tx
            .data()
            .chunks(per)
            .map(|ch| ch.iter().sum::<f64>() / per as f64)
            .collect();
        let value = Tensor::from_vec(data);
        self.push(value, Op::GlobalAvgPool(x), &[x])
    }

    /// Normalizes over the channel axis at every position of `x: [C, ...]`,
    /// then applies the per-channel affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let c = tx.shape()[0];
        if tg.shape() != [c] || tb.shape() != [c] {
            return Err(shape_err("layer_norm", tx, tg));
        }
        let p = tx.len() / c;
        let d = tx.data();
        let mut xhat = vec![0.0; d.len()];
        let mut inv_std = vec![0.0; p];
        let mut out = vec![0.0; d.len()];
        for pos in 0..p {
            let mean = (0..c).map(|ch| d[ch * p + pos]).sum::<f64>() / c as f64;
            let var = (0..c).map(|ch| (d[ch * p + pos] - mean).powi(2)).sum::<f64>() / c as f64;
            let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[pos] = istd;
            for ch in 0..c {
                let i = ch * p + pos;
                xhat[i] = (d[i] - mean) * istd;
                out[i] = tg.data()[ch] * xhat[i] + tb.data()[ch];
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Training-time inverted dropout: each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    /// Returns `x` unchanged when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1]")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if keep > 0.0 && rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let tx = self.value(x);
        let data = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Dropout { x, mask }, &[x]))
    }

    /// Concatenates along the first axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.value(*xs.first().ok_or_else(|| Error::invalid("concat of nothing"))?);
        let tail = first.shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &v in xs {
            let t = self.value(v);
            if t.shape()[1..] != tail[..] {
                return Err(shape_err("concat", first, t));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat(xs.to_vec()), xs))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let k = *tx.shape().last().unwrap();
        let mut out = tx.data().to_vec();
        out.chunks_mut(k).for_each(softmax_in_place);
        let value = Tensor::new(tx.shape().to_vec(), out).unwrap();
        self.push(value, Op::Softmax(x), &[x])
    }

    /// Cross-entropy of `softmax(logits)` against class `label`, computed
    /// from the logits directly.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let tl = self.value(logits);
        if tl.ndim() != 1 || label >= tl.len() {
            return Err(Error::invalid(format!(
                "cross_entropy: label {label} for logits of shape {:?}",
                tl.shape()
            )));
        }
        let mut probs = tl.data().to_vec();
        softmax_in_place(&mut probs);
        let max = tl.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + tl.data().iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let loss = lse - tl.data()[label];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, label, probs },
            &[logits],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        let mut visited = Vec::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            visited.push(idx);
            self.backprop_node(node, &g, &mut grads)?;
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes, visited })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, delta: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.axpy(1.0, &delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Reshape(x) => {
                if self.wants(*x) {
                    acc(*x, g.reshape(self.shape(*x))?);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.clone());
                }
                if self.wants(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    acc(*a, hadamard(g, self.value(*b)));
                }
                if self.wants(*b) {
                    acc(*b, hadamard(g, self.value(*a)));
                }
            }
            Op::Scale(x, alpha) => {
                if self.wants(*x) {
                    acc(*x, g.map(|v| v * alpha));
                }
            }
            Op::AddChannelBias(x, b) => {
                if self.wants(*x) {
                    acc(*x, g.clone());
                }
                if self.wants(*b) {
                    let c = self.shape(*b)[0];
                    let per = g.len() / c;
                    let gb = g.data().chunks(per).map(|ch| ch.iter().sum()).collect();
                    acc(*b, Tensor::from_vec(gb));
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if self.wants(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        g.data(),
                        n as isize,
                        1,
                        tb.data(),
                        1,
                        n as isize,
                        0.0,
                        &mut da,
                        k as isize,
                        1,
                    );
                    acc(*a, Tensor::new(vec![m, k], da)?);
                }
                if self.wants(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    gemm(
                        k,
                        m,
                        n,
                        1.0,
                        ta.data(),
                        1,
                        k as isize,
                        g.data(),
                        n as isize,
                        1,
                        0.0,
                        &mut db,
                        n as isize,
                        1,
                    );
                    acc(*b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::Transpose(x) => {
                if self.wants(*x) {
                    let (r, c) = (g.shape()[0], g.shape()[1]);
                    acc(*x, Tensor::new(vec![c, r], transpose_data(g.data(), r, c))?);
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let tx = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(tx.data())
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    acc(*x, Tensor::new(tx.shape().to_vec(), data)?);
                }
            }
            Op::TemporalConv { x, w } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (cin, t, v) = dims3("temporal_conv", tx)?;
                let (cout, k) = (tw.shape()[0], tw.shape()[2]);
                let tv = (t * v) as isize;
                let mut dx = self.wants(*x).then(|| vec![0.0; tx.len()]);
                let mut dw = self.wants(*w).then(|| vec![0.0; tw.len()]);
                for d in 0..k {
                    let Some((t0, t1, s)) = shifted_range(t, d, k) else {
                        continue;
                    };
                    let cols = (t1 - t0) * v;
                    let src = ((t0 as isize + s) as usize) * v;
                    if let Some(dx) = dx.as_mut() {
                        gemm(
                            cin,
                            cout,
                            cols,
                            1.0,
                            &tw.data()[d..],
                            k as isize,
                            (cin * k) as isize,
                            &g.data()[t0 * v..],
                            tv,
                            1,
                            1.0,
                            &mut dx[src..],
                            tv,
                            1,
                        );
                    }
                    if let Some(dw) = dw.as_mut() {
                        gemm(
                            cout,
                            cols,
                            cin,
                            1.0,
                            &g.data()[t0 * v..],
                            tv,
                            1,
                            &tx.data()[src..],
                            1,
                            tv,
                            1.0,
                            &mut dw[d..],
                            (cin * k) as isize,
                            k as isize,
                        );
                    }
                }
                if let Some(dx) = dx {
                    acc(*x, Tensor::new(tx.shape().to_vec(), dx)?);
                }
                if let Some(dw) = dw {
                    acc(*w, Tensor::new(tw.shape().to_vec(), dw)?);
                }
            }
            Op::DepthwiseTemporalConv { x, w } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (c, t, v) = dims3("depthwise_temporal_conv", tx)?;
                let k = tw.shape()[1];
                let pad = k / 2;
                let (want_x, want_w) = (self.wants(*x), self.wants(*w));
                let mut dx = vec![0.0; if want_x { tx.len() } else { 0 }];
                let mut dw = vec![0.0; if want_w { tw.len() } else { 0 }];
                let (xd, wd, gd) = (tx.data(), tw.data(), g.data());
                for ch in 0..c {
                    let base = ch * t * v;
                    for d in 0..k {
                        let wv = wd[ch * k + d];
                        let mut wacc = 0.0;
                        for f in 0..t {
                            let src = f as isize + d as isize - pad as isize;
                            if src < 0 || src >= t as isize {
                                continue;
                            }
                            let so = base + src as usize * v;
                            let oo = base + f * v;
                            for j in 0..v {
                                if want_x {
                                    dx[so + j] += wv * gd[oo + j];
                                }
                                wacc += gd[oo + j] * xd[so + j];
                            }
                        }
                        if want_w {
                            dw[ch * k + d] += wacc;
                        }
                    }
                }
                if want_x {
                    acc(*x, Tensor::new(tx.shape().to_vec(), dx)?);
                }
                if want_w {
                    acc(*w, Tensor::new(tw.shape().to_vec(), dw)?);
                }
            }
            Op::MaxBroadcast { x, axis, argmax } => {
                if self.wants(*x) {
                    let tx = self.value(*x);
                    let (c, t, v) = dims3("max_broadcast", tx)?;
                    let gd = g.data();
                    let mut dx = vec![0.0; tx.len()];
                    match axis {
                        PoolAxis::Frames => {
                            for ch in 0..c {
                                for j in 0..v {
                                    let s: f64 = (0..t).map(|f| gd[ch * t * v + f * v + j]).sum();
                                    dx[argmax[ch * v + j]] += s;
                                }
                            }
                        }
                        PoolAxis::Joints => {
                            for row in 0..c * t {
                                let s: f64 = gd[row * v..(row + 1) * v].iter().sum();
                                dx[argmax[row]] += s;
                            }
                        }
                    }
                    acc(*x, Tensor::new(tx.shape().to_vec(), dx)?);
                }
            }
            Op::GlobalAvgPool(x) => {
                if self.wants(*x) {
                    let tx = self.value(*x);
                    let c = tx.shape()[0];
                    let per = tx.len() / c;
                    let mut dx = Vec::with_capacity(tx.len());
                    for &gv in g.data() {
                        dx.extend(std::iter::repeat_n(gv / per as f64, per));
                    }
                    acc(*x, Tensor::new(tx.shape().to_vec(), dx)?);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let tg = self.value(*gamma);
                let c = tg.len();
                let p = g.len() / c;
                let gd = g.data();
                if self.wants(*x) {
                    let mut dx = vec![0.0; gd.len()];
                    for pos in 0..p {
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for ch in 0..c {
                            let i = ch * p + pos;
                            let dxh = gd[i] * tg.data()[ch];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xhat[i];
                        }
                        let scale = inv_std[pos] / c as f64;
                        for ch in 0..c {
                            let i = ch * p + pos;
                            let dxh = gd[i] * tg.data()[ch];
                            dx[i] = scale * (c as f64 * dxh - sum_dxhat - xhat[i] * sum_dxhat_xhat);
                        }
                    }
                    acc(*x, Tensor::new(g.shape().to_vec(), dx)?);
                }
                if self.wants(*gamma) {
                    let dg = (0..c)
                        .map(|ch| (0..p).map(|pos| gd[ch * p + pos] * xhat[ch * p + pos]).sum())
                        .collect();
                    acc(*gamma, Tensor::from_vec(dg));
                }
                if self.wants(*beta) {
                    let db = (0..c).map(|ch| gd[ch * p..(ch + 1) * p].iter().sum()).collect();
                    acc(*beta, Tensor::from_vec(db));
                }
            }
            Op::Dropout { x, mask } => {
                if self.wants(*x) {
                    let data = g.data().iter().zip(mask).map(|(gv, m)| gv * m).collect();
                    acc(*x, Tensor::new(g.shape().to_vec(), data)?);
                }
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for &v in xs {
                    let shape = self.shape(v).to_vec();
                    let n: usize = shape.iter().product();
                    if self.wants(v) {
                        acc(v, Tensor::new(shape, g.data()[off..off + n].to_vec())?);
                    }
                    off += n;
                }
            }
            Op::Softmax(x) => {
                if self.wants(*x) {
                    let y = &node.value;
                    let k = *y.shape().last().unwrap();
                    let mut dx = Vec::with_capacity(y.len());
                    for (yr, gr) in y.data().chunks(k).zip(g.data().chunks(k)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        dx.extend(yr.iter().zip(gr).map(|(yi, gi)| yi * (gi - dot)));
                    }
                    acc(*x, Tensor::new(y.shape().to_vec(), dx)?);
                }
            }
            Op::CrossEntropy { logits, label, probs } => {
                if self.wants(*logits) {
                    let gl = g.data()[0];
                    let mut d: Vec<f64> = probs.iter().map(|p| p * gl).collect();
                    d[*label] -= gl;
                    acc(*logits, Tensor::from_vec(d));
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    acc(*x, Tensor::full(self.shape(*x), g.data()[0]));
                }
            }
        }
        Ok(())
    }
}

/// Output frame range `[t0, t1)` touched by kernel tap `d` and the source
/// shift `s` (source frame = output frame + s). `None` when empty.
fn shifted_range(t: usize, d: usize, k: usize) -> Option<(usize, usize, isize)> {
    let s = d as isize - (k / 2) as isize;
    let t0 = (-s).max(0) as usize;
    let t1 = (t as isize - s).min(t as isize);
    if t1 <= t0 as isize {
        return None;
    }
    Some((t0, t1 as usize, s))
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn transpose_data(d: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; d.len()];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
