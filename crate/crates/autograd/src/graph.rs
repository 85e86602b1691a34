//! Define-by-run tape and reverse-mode sweep.

use crate::ops::norm::{self, BatchStats};
use crate::ops::{conv, softmax, spatial};
use crate::real::{matmul, Real};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a batch norm node normalizes its input.
#[derive(Debug, Clone, Copy)]
pub enum NormMode<'a, T> {
    /// Normalize with the statistics of the current batch.
    Batch,
    /// Normalize with frozen running statistics.
    Frozen { mean: &'a [T], var: &'a [T] },
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        pad: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Tensor<T>,
        inv_std: Vec<T>,
    },
    FrozenNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Relu(Var),
    WeightedSum(Vec<(Var, T)>),
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    Resize(Var),
    Concat(Vec<Var>),
    SelectChannel {
        x: Var,
        channel: usize,
    },
    Softmax(Var),
    ChannelBroadcastMul {
        map: Var,
        features: Var,
    },
    GlobalAvgPool(Var),
    Mul(Var, Var),
    Sum(Var),
    Reshape(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    CrossEntropy {
        logits: Var,
        probs: Tensor<T>,
        targets: Vec<u32>,
        weights: Vec<T>,
        eps: T,
    },
    Entropy {
        logits: Var,
        probs: Tensor<T>,
        eps: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recording of one forward computation.
///
/// Every operation appends a node; [`Graph::backward`] walks the nodes in
/// reverse. Graphs are cheap to build and meant to be dropped after one
/// step.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    bn_eps: T,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bn_eps: T::from_f64_lossy(1e-5),
        }
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

    /// Records a value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable leaf.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var> {
        let out = conv::forward(self.value(x), self.value(w), b.map(|b| self.value(b)), pad)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv2d { x, w, b, pad }, rg))
    }

    /// Batch normalization. In [`NormMode::Batch`] the observed statistics
    /// are returned so the caller can fold them into running averages.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        match mode {
            NormMode::Batch => {
                let f = norm::forward_train(self.value(x), self.value(gamma), self.value(beta), self.bn_eps)?;
                let v = self.push(
                    f.output,
                    Op::BatchNorm {
                        x,
                        gamma,
                        beta,
                        normalized: f.normalized,
                        inv_std: f.inv_std,
                    },
                    rg,
                );
                Ok((v, Some(f.stats)))
            }
            NormMode::Frozen { mean, var } => {
                let (out, inv_std) = norm::forward_frozen(
                    self.value(x),
                    self.value(gamma),
                    self.value(beta),
                    mean,
                    var,
                    self.bn_eps,
                )?;
                let v = self.push(
                    out,
                    Op::FrozenNorm {
                        x,
                        gamma,
                        beta,
                        mean: mean.to_vec(),
                        inv_std,
                    },
                    rg,
                );
                Ok((v, None))
            }
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        // NaN passes through so divergence stays visible
        let out = self.value(x).map(|v| if v < T::zero() { T::zero() } else { v });
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    /// `Σ coeff_i · x_i` over equally shaped inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let (first, _) = *terms
            .first()
            .ok_or_else(|| Error::Shape("weighted sum of zero terms".into()))?;
        let mut out = Tensor::zeros(self.value(first).shape());
        for &(v, c) in terms {
            let val = self.value(v);
            if val.shape() != out.shape() {
                return Err(Error::Shape(format!(
                    "weighted sum shape mismatch {:?} vs {:?}",
                    val.shape(),
                    out.shape()
                )));
            }
            out.add_scaled(val, c);
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        Ok(self.push(out, Op::WeightedSum(terms.to_vec()), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.weighted_sum(&[(a, T::one()), (b, T::one())])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.weighted_sum(&[(x, c)])
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = spatial::max_pool2_forward(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Bilinear resize with half-pixel centers.
    pub fn resize_bilinear(&mut self, x: Var, height: usize, width: usize) -> Result<Var> {
        let out = spatial::resize_forward(self.value(x), height, width)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Resize(x), rg))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut total_c = 0;
        for &v in xs {
            let (vn, vc, vh, vw) = self.value(v).dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::Shape(format!(
                    "concat mismatch: {:?} vs {:?}",
                    self.value(v).shape(),
                    self.value(first).shape()
                )));
            }
            total_c += vc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total_c * hw);
        for s in 0..n {
            for &v in xs {
                let t = self.value(v);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[s * c * hw..(s + 1) * c * hw]);
            }
        }
        let out = Tensor::new(&[n, total_c, h, w], data)?;
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(out, Op::Concat(xs.to_vec()), rg))
    }

    /// Keeps one channel: `N×C×H×W -> N×1×H×W`.
    pub fn select_channel(&mut self, x: Var, channel: usize) -> Result<Var> {
        let t = self.value(x);
        let (n, c, h, w) = t.dims4()?;
        if channel >= c {
            return Err(Error::Shape(format!("channel {channel} out of range for {c}")));
        }
        let mut data = Vec::with_capacity(n * h * w);
        for s in 0..n {
            data.extend_from_slice(t.plane(s, channel));
        }
        let out = Tensor::new(&[n, 1, h, w], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SelectChannel { x, channel }, rg))
    }

    /// Softmax over axis 1.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = softmax::softmax(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    /// `map (N×1×H×W) ⊙ features (N×C×H×W)`, broadcasting over channels.
    pub fn channel_broadcast_mul(&mut self, map: Var, features: Var) -> Result<Var> {
        let (mn, mc, mh, mw) = self.value(map).dims4()?;
        let (n, c, h, w) = self.value(features).dims4()?;
        if mc != 1 || (mn, mh, mw) != (n, h, w) {
            return Err(Error::Shape(format!(
                "cannot broadcast {:?} over {:?}",
                self.value(map).shape(),
                self.value(features).shape()
            )));
        }
        let hw = h * w;
        let m = self.value(map).data();
        let f = self.value(features).data();
        let mut out = vec![T::zero(); f.len()];
        for s in 0..n {
            let mp = &m[s * hw..(s + 1) * hw];
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for i in 0..hw {
                    out[base + i] = mp[i] * f[base + i];
                }
            }
        }
        let out = Tensor::new(&[n, c, h, w], out)?;
        let rg = self.rg(map) || self.rg(features);
        Ok(self.push(out, Op::ChannelBroadcastMul { map, features }, rg))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "mul shape mismatch {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Spatial mean: `N×C×H×W -> N×C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (n, c, h, w) = t.dims4()?;
        let inv = T::one() / T::from_usize(h * w).unwrap();
        let data = t.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::new(&[n, c], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::GlobalAvgPool(x), rg))
    }

    /// `x (N×I) · wᵀ (I×O) + b`, with `w` stored `O×I`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, i) = self.value(x).dims2()?;
        let (o, wi) = self.value(w).dims2()?;
        if wi != i || self.value(b).numel() != o {
            return Err(Error::Shape(format!(
                "linear: input {:?}, weight {:?}, bias {:?}",
                self.value(x).shape(),
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(self.value(b).data());
        }
        matmul(n, i, o, T::one(), self.value(x).data(), false, self.value(w).data(), true, T::one(), &mut out);
        let out = Tensor::new(&[n, o], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    /// Softmax cross entropy over axis 1 against integer targets (one per
    /// sample and position), each sample scaled by a constant weight. The
    /// weights are data: no gradient flows into whatever produced them.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], weights: &[T], eps: T) -> Result<Var> {
        let probs = softmax::softmax(self.value(logits))?;
        let value = softmax::cross_entropy(&probs, targets, weights, eps)?;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(value),
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                eps,
            },
            rg,
        ))
    }

    /// Mean Shannon entropy of the softmax over axis 1.
    pub fn entropy(&mut self, logits: Var, eps: T) -> Result<Var> {
        let probs = softmax::softmax(self.value(logits))?;
        let value = softmax::entropy(&probs, eps)?;
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(value), Op::Entropy { logits, probs, eps }, rg))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward root must be scalar, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), T::one()));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            // interior gradients are dropped once consumed
            if matches!(node.op, Op::Leaf) || idx == root.0 {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(
        &self,
        op: &Op<T>,
        value: &Tensor<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, pad } => {
                let need = [self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b))];
                let cg = conv::backward(self.value(*x), self.value(*w), *pad, g, need)?;
                if let Some(t) = cg.input {
                    self.accumulate(grads, *x, t);
                }
                if let Some(t) = cg.weight {
                    self.accumulate(grads, *w, t);
                }
                if let (Some(b), Some(t)) = (b, cg.bias) {
                    self.accumulate(grads, *b, t);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let ng = norm::backward_train(normalized, inv_std, self.value(*gamma), g)?;
                self.accumulate(grads, *x, ng.input);
                self.accumulate(grads, *gamma, ng.gamma);
                self.accumulate(grads, *beta, ng.beta);
            }
            Op::FrozenNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let ng = norm::backward_frozen(self.value(*x), self.value(*gamma), mean, inv_std, g)?;
                self.accumulate(grads, *x, ng.input);
                self.accumulate(grads, *gamma, ng.gamma);
                self.accumulate(grads, *beta, ng.beta);
            }
            Op::Relu(x) => {
                let mut gx = g.clone();
                for (gv, &y) in gx.data_mut().iter_mut().zip(value.data()) {
                    if y <= T::zero() {
                        *gv = T::zero();
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::WeightedSum(terms) => {
                for &(v, c) in terms {
                    if self.rg(v) {
                        self.accumulate(grads, v, g.map(|x| x * c));
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let gx = spatial::max_pool2_backward(self.value(*x).shape(), argmax, g)?;
                self.accumulate(grads, *x, gx);
            }
            Op::Resize(x) => {
                let gx = spatial::resize_backward(self.value(*x).shape(), g)?;
                self.accumulate(grads, *x, gx);
            }
            Op::Concat(xs) => {
                let (n, total_c, h, w) = g.dims4()?;
                let hw = h * w;
                let mut offset = 0;
                for &v in xs {
                    let c = self.value(v).shape()[1];
                    if self.rg(v) {
                        let mut data = Vec::with_capacity(n * c * hw);
                        for s in 0..n {
                            let start = (s * total_c + offset) * hw;
                            data.extend_from_slice(&g.data()[start..start + c * hw]);
                        }
                        self.accumulate(grads, v, Tensor::new(&[n, c, h, w], data)?);
                    }
                    offset += c;
                }
            }
            Op::SelectChannel { x, channel } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let hw = h * w;
                let mut gx = Tensor::zeros(&[n, c, h, w]);
                for s in 0..n {
                    let start = (s * c + channel) * hw;
                    gx.data_mut()[start..start + hw].copy_from_slice(&g.data()[s * hw..(s + 1) * hw]);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x) => {
                let gx = softmax::softmax_backward(value, g)?;
                self.accumulate(grads, *x, gx);
            }
            Op::ChannelBroadcastMul { map, features } => {
                let (n, c, h, w) = self.value(*features).dims4()?;
                let hw = h * w;
                let m = self.value(*map).data();
                let f = self.value(*features).data();
                let gd = g.data();
                if self.rg(*features) {
                    let mut gf = vec![T::zero(); f.len()];
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * hw;
                            for i in 0..hw {
                                gf[base + i] = gd[base + i] * m[s * hw + i];
                            }
                        }
                    }
                    self.accumulate(grads, *features, Tensor::new(&[n, c, h, w], gf)?);
                }
                if self.rg(*map) {
                    let mut gm = vec![T::zero(); n * hw];
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * hw;
                            for i in 0..hw {
                                gm[s * hw + i] = gm[s * hw + i] + gd[base + i] * f[base + i];
                            }
                        }
                    }
                    self.accumulate(grads, *map, Tensor::new(&[n, 1, h, w], gm)?);
                }
            }
            Op::GlobalAvgPool(x) => {
                let shape = self.value(*x).shape().to_vec();
                let hw = shape[2] * shape[3];
                let inv = T::one() / T::from_usize(hw).unwrap();
                let mut data = Vec::with_capacity(shape.iter().product());
                for &gv in g.data() {
                    data.extend(std::iter::repeat_n(gv * inv, hw));
                }
                self.accumulate(grads, *x, Tensor::new(&shape, data)?);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let d = g.data().iter().zip(self.value(*b).data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::new(g.shape(), d)?);
                }
                if self.rg(*b) {
                    let d = g.data().iter().zip(self.value(*a).data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::new(g.shape(), d)?);
                }
            }
            Op::Sum(x) => {
                let gx = Tensor::full(self.value(*x).shape(), g.data()[0]);
                self.accumulate(grads, *x, gx);
            }
            Op::Reshape(x) => {
                let gx = g.clone().reshape(self.value(*x).shape())?;
                self.accumulate(grads, *x, gx);
            }
            Op::Linear { x, w, b } => {
                let (n, i) = self.value(*x).dims2()?;
                let (o, _) = self.value(*w).dims2()?;
                if self.rg(*x) {
                    let mut gx = vec![T::zero(); n * i];
                    matmul(n, o, i, T::one(), g.data(), false, self.value(*w).data(), false, T::zero(), &mut gx);
                    self.accumulate(grads, *x, Tensor::new(&[n, i], gx)?);
                }
                if self.rg(*w) {
                    let mut gw = vec![T::zero(); o * i];
                    matmul(o, n, i, T::one(), g.data(), true, self.value(*x).data(), false, T::zero(), &mut gw);
                    self.accumulate(grads, *w, Tensor::new(&[o, i], gw)?);
                }
                if self.rg(*b) {
                    let mut gb = vec![T::zero(); o];
                    for row in g.data().chunks(o) {
                        for (a, &v) in gb.iter_mut().zip(row) {
                            *a = *a + v;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(self.value(*b).shape(), gb)?);
                }
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                weights,
                eps,
            } => {
                let gx = softmax::cross_entropy_backward(probs, targets, weights, *eps, g.data()[0])?;
                self.accumulate(grads, *logits, gx);
            }
            Op::Entropy { logits, probs, eps } => {
                let gx = softmax::entropy_backward(probs, *eps, g.data()[0])?;
                self.accumulate(grads, *logits, gx);
            }
        }
        Ok(())
    }
}

/// Gradients produced by one reverse sweep, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the root with respect to `v`, or `None` when `v` does not
    /// influence the root through differentiable paths.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
