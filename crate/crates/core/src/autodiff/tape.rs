//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive appends one node whose inputs have strictly smaller ids,
//! so reverse id order is a topological order and `backward` visits each
//! node once.

use super::gemm::{gemm, Layout};
use super::Tensor;
use crate::math::{log_sigmoid, sigmoid};
use crate::{ensure, Error, Result};

/// Layer-norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    ScaleByVar(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Exp(Var),
    LogSigmoid(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Softmax(Var),
    SumLastAxis(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    SelectAxis1 { x: Var, index: usize },
    BceWithLogits { logits: Var, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], f: impl FnOnce(&mut [f64])) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(t.data_mut());
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf: gradients flow into it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: no gradient is computed for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err(format!("matmul {sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            Layout::row_major(k),
            self.value(b).data(),
            Layout::row_major(n),
            &mut out,
            0.0,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng))
    }

    /// `[b,m,k] × [b,k,n] → [b,m,n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return shape_err(format!("batch_matmul {sa:?} x {sb:?}"));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                &ad[i * m * k..(i + 1) * m * k],
                Layout::row_major(k),
                &bd[i * k * n..(i + 1) * k * n],
                Layout::row_major(n),
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![bs, m, n], out)?, Op::BatchMatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).shape();
        if s.len() != 2 {
            return shape_err(format!("transpose of {s:?}"));
        }
        let (r, c) = (s[0], s[1]);
        let d = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err(format!("add {:?} + {:?}", ta.shape(), tb.shape()));
        }
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    /// Broadcast-add a `[n]` bias over the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.last_dim();
        if tb.shape() != [n] {
            return shape_err(format!("add_bias {:?} + {:?}", tx.shape(), tb.shape()));
        }
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(t, Op::AddBias(x, bias), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err(format!("mul {:?} * {:?}", ta.shape(), tb.shape()));
        }
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    /// Tensor times a one-element variable.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return shape_err(format!(
                "scale_by needs a scalar, got {:?}",
                self.value(s).shape()
            ));
        }
        let k = self.value(s).item();
        let t = self.value(x).map(|v| v * k);
        let ng = self.ng(x) || self.ng(s);
        Ok(self.push(t, Op::ScaleByVar(x, s), ng))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let t = self.value(x).map(|v| v * k);
        let ng = self.ng(x);
        self.push(t, Op::Scale(x, k), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push(t, Op::Relu(x), ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::exp);
        let ng = self.ng(x);
        self.push(t, Op::Exp(x), ng)
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(log_sigmoid);
        let ng = self.ng(x);
        self.push(t, Op::LogSigmoid(x), ng)
    }

    /// Normalizes the last axis to zero mean and unit variance; no affine.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let n = tx.last_dim();
        let mut out = tx.data().to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / n.max(1));
        for row in out.chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let t = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::LayerNorm { x, inv_std }, ng)
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let n = tx.last_dim();
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Softmax(x), ng)
    }

    /// `[..., n] → [...]`.
    pub fn sum_last_axis(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let n = tx.last_dim();
        let out: Vec<f64> = tx.data().chunks(n).map(|r| r.iter().sum()).collect();
        let mut shape = tx.shape().to_vec();
        shape.pop();
        if shape.is_empty() {
            shape.push(1);
        }
        let t = Tensor::new(shape, out).expect("consistent");
        let ng = self.ng(x);
        self.push(t, Op::SumLastAxis(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).data().iter().sum());
        let ng = self.ng(x);
        self.push(t, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let t = Tensor::scalar(tx.data().iter().sum::<f64>() / tx.numel() as f64);
        let ng = self.ng(x);
        self.push(t, Op::Mean(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// `x[:, index, :]` of a rank-3 tensor.
    pub fn select_axis1(&mut self, x: Var, index: usize) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() != 3 || index >= s[1] {
            return shape_err(format!("select_axis1({index}) of {s:?}"));
        }
        let (b, l, t) = (s[0], s[1], s[2]);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(b * t);
        for i in 0..b {
            out.extend_from_slice(&d[(i * l + index) * t..(i * l + index + 1) * t]);
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(vec![b, t], out)?,
            Op::SelectAxis1 { x, index },
            ng,
        ))
    }

    /// Mean of `-log σ(target · logit)` with `target ∈ {-1, +1}`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let tl = self.value(logits);
        ensure!(
            tl.numel() == targets.len(),
            Shape,
            "bce: {} logits vs {} targets",
            tl.numel(),
            targets.len()
        );
        ensure!(!targets.is_empty(), Shape, "bce on empty batch");
        let loss = tl
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &t)| -log_sigmoid(t * z))
            .sum::<f64>()
            / targets.len() as f64;
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        ensure!(
            loss.0 < self.nodes.len(),
            State,
            "backward on a node that was never recorded"
        );
        ensure!(
            self.value(loss).numel() == 1,
            Shape,
            "backward needs a scalar loss, got {:?}",
            self.value(loss).shape()
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.ng(*a) {
                    accumulate(&mut grads[a.0], ta.shape(), |da| {
                        gemm(
                            m,
                            n,
                            k,
                            gd,
                            Layout::row_major(n),
                            tb.data(),
                            Layout::transposed(n),
                            da,
                            1.0,
                        )
                    });
                }
                if self.ng(*b) {
                    accumulate(&mut grads[b.0], tb.shape(), |db| {
                        gemm(
                            k,
                            m,
                            n,
                            ta.data(),
                            Layout::transposed(k),
                            gd,
                            Layout::row_major(n),
                            db,
                            1.0,
                        )
                    });
                }
            }
            Op::BatchMatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (bs, m, k, n) = (ta.shape()[0], ta.shape()[1], ta.shape()[2], tb.shape()[2]);
                if self.ng(*a) {
                    accumulate(&mut grads[a.0], ta.shape(), |da| {
                        for i in 0..bs {
                            gemm(
                                m,
                                n,
                                k,
                                &gd[i * m * n..(i + 1) * m * n],
                                Layout::row_major(n),
                                &tb.data()[i * k * n..(i + 1) * k * n],
                                Layout::transposed(n),
                                &mut da[i * m * k..(i + 1) * m * k],
                                1.0,
                            );
                        }
                    });
                }
                if self.ng(*b) {
                    accumulate(&mut grads[b.0], tb.shape(), |db| {
                        for i in 0..bs {
                            gemm(
                                k,
                                m,
                                n,
                                &ta.data()[i * m * k..(i + 1) * m * k],
                                Layout::transposed(k),
                                &gd[i * m * n..(i + 1) * m * n],
                                Layout::row_major(n),
                                &mut db[i * k * n..(i + 1) * k * n],
                                1.0,
                            );
                        }
                    });
                }
            }
            Op::Transpose(a) => {
                let s = self.value(*a).shape();
                let (r, c) = (s[0], s[1]);
                accumulate(&mut grads[a.0], s, |da| {
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] += gd[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.ng(*v) {
                        accumulate(&mut grads[v.0], y.shape(), |d| {
                            d.iter_mut().zip(gd).for_each(|(d, g)| *d += g)
                        });
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if self.ng(*x) {
                    accumulate(&mut grads[x.0], y.shape(), |d| {
                        d.iter_mut().zip(gd).for_each(|(d, g)| *d += g)
                    });
                }
                if self.ng(*bias) {
                    let n = y.last_dim();
                    accumulate(&mut grads[bias.0], &[n], |d| {
                        for row in gd.chunks(n) {
                            d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    accumulate(&mut grads[a.0], y.shape(), |d| {
                        for ((d, g), o) in d.iter_mut().zip(gd).zip(tb.data()) {
                            *d += g * o;
                        }
                    });
                }
                if self.ng(*b) {
                    accumulate(&mut grads[b.0], y.shape(), |d| {
                        for ((d, g), o) in d.iter_mut().zip(gd).zip(ta.data()) {
                            *d += g * o;
                        }
                    });
                }
            }
            Op::ScaleByVar(x, s) => {
                let (tx, k) = (self.value(*x), self.value(*s).item());
                if self.ng(*x) {
                    accumulate(&mut grads[x.0], tx.shape(), |d| {
                        d.iter_mut().zip(gd).for_each(|(d, g)| *d += g * k)
                    });
                }
                if self.ng(*s) {
                    let ds: f64 = gd.iter().zip(tx.data()).map(|(g, v)| g * v).sum();
                    accumulate(&mut grads[s.0], self.value(*s).shape(), |d| d[0] += ds);
                }
            }
            Op::Scale(x, k) => {
                accumulate(&mut grads[x.0], y.shape(), |d| {
                    d.iter_mut().zip(gd).for_each(|(d, g)| *d += g * k)
                });
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                accumulate(&mut grads[x.0], y.shape(), |d| {
                    for ((d, g), v) in d.iter_mut().zip(gd).zip(xd) {
                        if *v > 0.0 {
                            *d += g;
                        }
                    }
                });
            }
            Op::Exp(x) => {
                accumulate(&mut grads[x.0], y.shape(), |d| {
                    for ((d, g), v) in d.iter_mut().zip(gd).zip(y.data()) {
                        *d += g * v;
                    }
                });
            }
            Op::LogSigmoid(x) => {
                let xd = self.value(*x).data();
                accumulate(&mut grads[x.0], y.shape(), |d| {
                    for ((d, g), v) in d.iter_mut().zip(gd).zip(xd) {
                        *d += g * sigmoid(-v);
                    }
                });
            }
            Op::LayerNorm { x, inv_std } => {
                let n = y.last_dim();
                let nf = n as f64;
                accumulate(&mut grads[x.0], y.shape(), |d| {
                    for (((drow, grow), yrow), inv) in d
                        .chunks_mut(n)
                        .zip(gd.chunks(n))
                        .zip(y.data().chunks(n))
                        .zip(inv_std)
                    {
                        let sg: f64 = grow.iter().sum();
                        let sgy: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                        for ((d, g), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += inv / nf * (nf * g - sg - yv * sgy);
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let n = y.last_dim();
                accumulate(&mut grads[x.0], y.shape(), |d| {
                    for ((drow, grow), yrow) in
                        d.chunks_mut(n).zip(gd.chunks(n)).zip(y.data().chunks(n))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                        for ((d, g), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += yv * (g - dot);
                        }
                    }
                });
            }
            Op::SumLastAxis(x) => {
                let tx = self.value(*x);
                let n = tx.last_dim();
                accumulate(&mut grads[x.0], tx.shape(), |d| {
                    for (drow, g) in d.chunks_mut(n).zip(gd) {
                        drow.iter_mut().for_each(|d| *d += g);
                    }
                });
            }
            Op::Sum(x) => {
                let g0 = gd[0];
                accumulate(&mut grads[x.0], self.value(*x).shape(), |d| {
                    d.iter_mut().for_each(|d| *d += g0)
                });
            }
            Op::Mean(x) => {
                let tx = self.value(*x);
                let g0 = gd[0] / tx.numel() as f64;
                accumulate(&mut grads[x.0], tx.shape(), |d| {
                    d.iter_mut().for_each(|d| *d += g0)
                });
            }
            Op::Reshape(x) => {
                accumulate(&mut grads[x.0], self.value(*x).shape(), |d| {
                    d.iter_mut().zip(gd).for_each(|(d, g)| *d += g)
                });
            }
            Op::SelectAxis1 { x, index } => {
                let s = self.value(*x).shape();
                let (b, l, t) = (s[0], s[1], s[2]);
                accumulate(&mut grads[x.0], s, |d| {
                    for i in 0..b {
                        let dst = &mut d[(i * l + index) * t..(i * l + index + 1) * t];
                        dst.iter_mut()
                            .zip(&gd[i * t..(i + 1) * t])
                            .for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::BceWithLogits { logits, targets } => {
                let zd = self.value(*logits).data();
                let scale = gd[0] / targets.len() as f64;
                accumulate(&mut grads[logits.0], self.value(*logits).shape(), |d| {
                    for ((d, z), t) in d.iter_mut().zip(zd).zip(targets) {
                        *d += -t * sigmoid(-t * z) * scale;
                    }
                });
            }
        }
    }
}
