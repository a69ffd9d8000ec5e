//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends a node after its inputs, so walking the tape backwards is a
//! reverse topological order. Nodes keep their primal value; ops that need
//! more for the backward pass (softmax weights, inverse norms) save it inline.

use std::sync::Arc;

use crate::attention::{attend_backward, attend_forward, rotate_in_place, AttnMask, BlockPlan, HeadLayout, RopeCache};
use crate::error::{shape, Error, Result};
use crate::numeric::ops::{layer_norm_into, rms_norm_into, sigmoid, silu};
use crate::numeric::{gemm, Real, Tensor};
use crate::par::Parallelism;

/// Handle to a value recorded on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Tanh(Var),
    Rows { x: Var, start: usize },
    Embed { table: Var, ids: Vec<usize> },
    RmsNorm { x: Var, gain: Var, inv: Vec<T> },
    LayerNorm { x: Var, gain: Var, inv: Vec<T> },
    SplitHeads { x: Var, heads: usize },
    MergeHeads { x: Var },
    Rope { x: Var, cache: Arc<RopeCache>, positions: Vec<usize> },
    Attend { q: Var, k: Var, v: Var, mask: AttnMask, layout: HeadLayout, probs: Option<Vec<T>> },
    SwiGlu { gate: Var, up: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<T>, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recorded primal ops plus the machinery to accumulate adjoints.
pub struct GradTape<T: Real> {
    nodes: Vec<Node<T>>,
    parallelism: Parallelism,
    record: bool,
}

impl<T: Real> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`GradTape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Adjoint of leaf `v`; zero when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("adjoint shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match self.grads[v.0].take() {
            Some(g) => Tensor::new(shape, g).expect("adjoint shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

impl<T: Real> GradTape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), parallelism: Parallelism::default(), record: true }
    }

    /// A tape that keeps primal values only; [`backward`](Self::backward) is
    /// unavailable and attention weights are dropped unless asked for.
    pub fn inference() -> Self {
        Self { record: false, ..Self::new() }
    }

    pub fn with_parallelism(mut self, p: Parallelism) -> Self {
        self.parallelism = p;
        self
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Dense `[heads, len, len]` weights of an attention node, if kept.
    pub fn attention_weights(&self, v: Var) -> Option<Vec<f64>> {
        match &self.nodes[v.0].op {
            Op::Attend { probs: Some(p), mask, layout, .. } => {
                Some(BlockPlan::new(mask).expand(p, layout.n_query_heads, layout.len))
            }
            _ => None,
        }
    }

    /// `a · b` where `b` is `[k, n]` and `a` has last axis `k`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.last_dim() != bv.shape()[0] {
            return Err(shape(format!("matmul {:?} · {:?}", av.shape(), bv.shape())));
        }
        let (k, n) = (bv.shape()[0], bv.shape()[1]);
        let m = av.len() / k.max(1);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, T::zero(), &mut out);
        let mut out_shape = av.shape().to_vec();
        *out_shape.last_mut().unwrap() = n;
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b, m, k, n }))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape(format!("{what} {:?} vs {:?}", self.value(a).shape(), self.value(b).shape())));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut value = self.value(a).clone();
        for (x, &y) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *x += y;
        }
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let mut value = self.value(a).clone();
        for (x, &y) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *x *= y;
        }
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        self.push(value, Op::Tanh(a))
    }

    /// Rows `start..end` of a 2-D value.
    pub fn rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || start > end || end > xv.shape()[0] {
            return Err(shape(format!("rows {start}..{end} of {:?}", xv.shape())));
        }
        let w = xv.shape()[1];
        let value = Tensor::new(vec![end - start, w], xv.data()[start * w..end * w].to_vec())?;
        Ok(self.push(value, Op::Rows { x, start }))
    }

    /// Gathers rows of a `[vocab, dim]` table.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(shape("embedding table must be 2-D"));
        }
        let (vocab, dim) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Invalid(format!("token id {id} outside vocabulary of {vocab}")));
            }
            data.extend_from_slice(&t.data()[id * dim..(id + 1) * dim]);
        }
        let value = Tensor::new(vec![ids.len(), dim], data)?;
        Ok(self.push(value, Op::Embed { table, ids: ids.to_vec() }))
    }

    fn check_gain(&self, x: Var, gain: Var) -> Result<usize> {
        let d = self.value(x).last_dim();
        if self.value(gain).len() != d {
            return Err(shape(format!("gain length {} vs last axis {d}", self.value(gain).len())));
        }
        Ok(d)
    }

    /// RMS norm of every row along the last axis.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: T) -> Result<Var> {
        let d = self.check_gain(x, gain)?;
        let (xv, gv) = (self.value(x), self.value(gain));
        let mut out = Tensor::zeros(xv.shape());
        let mut inv = Vec::with_capacity(xv.len() / d);
        for (src, dst) in xv.data().chunks(d).zip(out.data_mut().chunks_mut(d)) {
            inv.push(rms_norm_into(src, gv.data(), eps, dst));
        }
        Ok(self.push(out, Op::RmsNorm { x, gain, inv }))
    }

    /// Layer norm (no bias, population variance) of every row along the last axis.
    pub fn layer_norm(&mut self, x: Var, gain: Var, eps: T) -> Result<Var> {
        let d = self.check_gain(x, gain)?;
        let (xv, gv) = (self.value(x), self.value(gain));
        let mut out = Tensor::zeros(xv.shape());
        let mut inv = Vec::with_capacity(xv.len() / d);
        for (src, dst) in xv.data().chunks(d).zip(out.data_mut().chunks_mut(d)) {
            inv.push(layer_norm_into(src, gv.data(), eps, dst));
        }
        Ok(self.push(out, Op::LayerNorm { x, gain, inv }))
    }

    /// `[len, heads·d]` → `[heads, len, d]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 2 || heads == 0 || s[1] % heads != 0 {
            return Err(shape(format!("cannot split {s:?} into {heads} heads")));
        }
        let (len, d) = (s[0], s[1] / heads);
        let mut out = vec![T::zero(); xv.len()];
        for t in 0..len {
            for h in 0..heads {
                out[(h * len + t) * d..(h * len + t + 1) * d]
                    .copy_from_slice(&xv.data()[t * heads * d + h * d..t * heads * d + (h + 1) * d]);
            }
        }
        let value = Tensor::new(vec![heads, len, d], out)?;
        Ok(self.push(value, Op::SplitHeads { x, heads }))
    }

    /// `[heads, len, d]` → `[len, heads·d]`.
    pub fn merge_heads(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 3 {
            return Err(shape(format!("merge_heads expects rank 3, got {s:?}")));
        }
        let out = merge(xv.data(), s[0], s[1], s[2]);
        let value = Tensor::new(vec![s[1], s[0] * s[2]], out)?;
        Ok(self.push(value, Op::MergeHeads { x }))
    }

    /// RoPE rotation of a `[heads, len, d]` value.
    pub fn rope(&mut self, x: Var, cache: &Arc<RopeCache>, positions: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 3 || s[1] != positions.len() || s[2] != cache.head_dim() {
            return Err(shape(format!("rope on {s:?} with {} positions", positions.len())));
        }
        cache.check_positions(positions)?;
        let mut value = xv.clone();
        rotate_in_place(value.data_mut(), s[1], positions, cache, false);
        Ok(self.push(value, Op::Rope { x, cache: Arc::clone(cache), positions: positions.to_vec() }))
    }

    /// Masked grouped-query attention on `[heads, len, d]` operands.
    pub fn attend(&mut self, q: Var, k: Var, v: Var, mask: &AttnMask, n_kv_heads: usize, keep_weights: bool) -> Result<Var> {
        let qs = self.value(q).shape().to_vec();
        if qs.len() != 3 {
            return Err(shape(format!("attend expects rank-3 queries, got {qs:?}")));
        }
        let layout = HeadLayout::new(qs[0], n_kv_heads, qs[1], qs[2])?;
        let want_kv = [n_kv_heads, qs[1], qs[2]];
        if self.value(k).shape() != want_kv || self.value(v).shape() != want_kv {
            return Err(shape(format!("attend k/v must be {want_kv:?}")));
        }
        if mask.len() != qs[1] {
            return Err(shape(format!("mask length {} vs sequence {}", mask.len(), qs[1])));
        }
        let (out, probs) = attend_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            layout,
            mask,
            keep_weights || self.record,
            self.parallelism,
        );
        let value = Tensor::new(qs, out)?;
        Ok(self.push(value, Op::Attend { q, k, v, mask: *mask, layout, probs }))
    }

    /// `silu(gate) ⊙ up`.
    pub fn swiglu(&mut self, gate: Var, up: Var) -> Result<Var> {
        self.same_shape(gate, up, "swiglu")?;
        let mut value = self.value(gate).map(silu);
        for (x, &u) in value.data_mut().iter_mut().zip(self.value(up).data()) {
            *x *= u;
        }
        Ok(self.push(value, Op::SwiGlu { gate, up }))
    }

    /// Weighted mean of `−log softmax(logits)[target]` over rows.
    /// `weights` defaults to all ones.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: Option<&[T]>) -> Result<Var> {
        let lv = self.value(logits);
        let v = lv.last_dim();
        let rows = lv.len() / v.max(1);
        if rows != targets.len() {
            return Err(shape(format!("{rows} logit rows vs {} targets", targets.len())));
        }
        let weights: Vec<T> = match weights {
            Some(w) if w.len() == rows => w.to_vec(),
            Some(w) => return Err(shape(format!("{} loss weights for {rows} rows", w.len()))),
            None => vec![T::one(); rows],
        };
        let total_w: T = weights.iter().copied().sum();
        if total_w <= T::zero() {
            return Err(Error::Invalid("loss weights sum to zero".into()));
        }
        let mut probs = lv.data().to_vec();
        let mut loss = T::zero();
        for ((row, &t), &w) in probs.chunks_mut(v).zip(targets).zip(&weights) {
            if t >= v {
                return Err(Error::Invalid(format!("target {t} outside vocabulary of {v}")));
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let target_logit = row[t] - max;
            let mut z = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            let log_z = z.ln();
            loss += w * (log_z - target_logit);
            let inv = T::one() / z;
            row.iter_mut().for_each(|x| *x *= inv);
        }
        let value = Tensor::scalar(loss / total_w);
        let weights = weights.into_iter().map(|w| w / total_w).collect();
        Ok(self.push(value, Op::CrossEntropy { logits, targets: targets.to_vec(), weights, probs }))
    }

    /// Accumulates adjoints of the scalar `loss` into every ancestor.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.record {
            return Err(Error::Invalid("backward on an inference tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(shape("backward needs a scalar loss"));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            // Only leaf adjoints are handed back; interior ones are dropped to bound memory.
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| self.nodes[v.0].value.data();
        let zeros = |v: Var| vec![T::zero(); self.nodes[v.0].value.len()];
        macro_rules! acc {
            ($v:expr) => {
                grads[$v.0].get_or_insert_with(|| zeros($v))
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let a_val = val(*a).to_vec();
                gemm(m, n, k, g, false, val(*b), true, T::one(), acc!(*a));
                gemm(k, m, n, &a_val, true, g, false, T::one(), acc!(*b));
            }
            Op::Add(a, b) => {
                acc!(*a).iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                acc!(*b).iter_mut().zip(g).for_each(|(x, &y)| *x += y);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                acc!(*a).iter_mut().zip(g).zip(&bv).for_each(|((x, &gy), &o)| *x += gy * o);
                acc!(*b).iter_mut().zip(g).zip(&av).for_each(|((x, &gy), &o)| *x += gy * o);
            }
            Op::Scale(a, s) => {
                acc!(*a).iter_mut().zip(g).for_each(|(x, &y)| *x += y * *s);
            }
            Op::Sum(a) => {
                acc!(*a).iter_mut().for_each(|x| *x += g[0]);
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc!(*a).iter_mut().zip(g).zip(y).for_each(|((x, &gy), &yv)| *x += gy * (T::one() - yv * yv));
            }
            Op::Rows { x, start } => {
                let w = node.value.last_dim();
                let dx = acc!(*x);
                for (a, &b) in dx[start * w..start * w + g.len()].iter_mut().zip(g) {
                    *a += b;
                }
            }
            Op::Embed { table, ids } => {
                let dim = node.value.last_dim();
                let dt = acc!(*table);
                for (t, &id) in ids.iter().enumerate() {
                    for (x, &y) in dt[id * dim..(id + 1) * dim].iter_mut().zip(&g[t * dim..(t + 1) * dim]) {
                        *x += y;
                    }
                }
            }
            Op::RmsNorm { x, gain, inv } => {
                let d = node.value.last_dim();
                let (xv, gv) = (val(*x).to_vec(), val(*gain).to_vec());
                let nd = T::of(d as f64);
                let mut dgain = vec![T::zero(); d];
                let dx = acc!(*x);
                for (r, &ir) in inv.iter().enumerate() {
                    let xs = &xv[r * d..(r + 1) * d];
                    let gs = &g[r * d..(r + 1) * d];
                    let mut proj = T::zero();
                    for c in 0..d {
                        proj += gs[c] * gv[c] * xs[c];
                        dgain[c] += gs[c] * xs[c] * ir;
                    }
                    let coef = ir * ir * ir * proj / nd;
                    for c in 0..d {
                        dx[r * d + c] += ir * gv[c] * gs[c] - coef * xs[c];
                    }
                }
                acc!(*gain).iter_mut().zip(&dgain).for_each(|(a, &b)| *a += b);
            }
            Op::LayerNorm { x, gain, inv } => {
                let d = node.value.last_dim();
                let (xv, gv) = (val(*x).to_vec(), val(*gain).to_vec());
                let nd = T::of(d as f64);
                let mut dgain = vec![T::zero(); d];
                let dx = acc!(*x);
                let mut xhat = vec![T::zero(); d];
                let mut dxhat = vec![T::zero(); d];
                for (r, &ir) in inv.iter().enumerate() {
                    let xs = &xv[r * d..(r + 1) * d];
                    let gs = &g[r * d..(r + 1) * d];
                    let mean = xs.iter().copied().sum::<T>() / nd;
                    let (mut m1, mut m2) = (T::zero(), T::zero());
                    for c in 0..d {
                        xhat[c] = (xs[c] - mean) * ir;
                        dxhat[c] = gs[c] * gv[c];
                        dgain[c] += gs[c] * xhat[c];
                        m1 += dxhat[c];
                        m2 += dxhat[c] * xhat[c];
                    }
                    m1 /= nd;
                    m2 /= nd;
                    for c in 0..d {
                        dx[r * d + c] += ir * (dxhat[c] - m1 - xhat[c] * m2);
                    }
                }
                acc!(*gain).iter_mut().zip(&dgain).for_each(|(a, &b)| *a += b);
            }
            Op::SplitHeads { x, heads } => {
                let s = node.value.shape();
                let merged = merge(g, *heads, s[1], s[2]);
                acc!(*x).iter_mut().zip(&merged).for_each(|(a, &b)| *a += b);
            }
            Op::MergeHeads { x } => {
                let s = self.nodes[x.0].value.shape();
                let (heads, len, d) = (s[0], s[1], s[2]);
                let dx = acc!(*x);
                for t in 0..len {
                    for h in 0..heads {
                        let src = &g[t * heads * d + h * d..t * heads * d + (h + 1) * d];
                        for (a, &b) in dx[(h * len + t) * d..(h * len + t + 1) * d].iter_mut().zip(src) {
                            *a += b;
                        }
                    }
                }
            }
            Op::Rope { x, cache, positions } => {
                let mut back = g.to_vec();
                rotate_in_place(&mut back, positions.len(), positions, cache, true);
                acc!(*x).iter_mut().zip(&back).for_each(|(a, &b)| *a += b);
            }
            Op::Attend { q, k, v, mask, layout, probs } => {
                let probs = probs.as_ref().expect("recording tape keeps attention weights");
                let (dq, dk, dv) = attend_backward(val(*q), val(*k), val(*v), probs, g, *layout, mask, self.parallelism);
                acc!(*q).iter_mut().zip(&dq).for_each(|(a, &b)| *a += b);
                acc!(*k).iter_mut().zip(&dk).for_each(|(a, &b)| *a += b);
                acc!(*v).iter_mut().zip(&dv).for_each(|(a, &b)| *a += b);
            }
            Op::SwiGlu { gate, up } => {
                let (gt, u) = (val(*gate).to_vec(), val(*up).to_vec());
                let dgate = acc!(*gate);
                for i in 0..g.len() {
                    let s = sigmoid(gt[i]);
                    dgate[i] += g[i] * u[i] * s * (T::one() + gt[i] * (T::one() - s));
                }
                let dup = acc!(*up);
                for i in 0..g.len() {
                    dup[i] += g[i] * silu(gt[i]);
                }
            }
            Op::CrossEntropy { logits, targets, weights, probs } => {
                let v = self.nodes[logits.0].value.last_dim();
                let dl = acc!(*logits);
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    let scale = g[0] * w;
                    for c in 0..v {
                        dl[r * v + c] += scale * probs[r * v + c];
                    }
                    dl[r * v + t] -= scale;
                }
            }
        }
    }
}

fn merge<T: Real>(x: &[T], heads: usize, len: usize, d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for h in 0..heads {
        for t in 0..len {
            out[t * heads * d + h * d..t * heads * d + (h + 1) * d]
                .copy_from_slice(&x[(h * len + t) * d..(h * len + t + 1) * d]);
        }
    }
    out
}
