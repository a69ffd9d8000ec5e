//! Masked grouped-query scaled-dot-product attention.
//!
//! Layout: queries `[n_query_heads, len, head_dim]`, keys and values
//! `[n_kv_heads, len, head_dim]`. Query head `h` reads kv head
//! `h / (n_query_heads / n_kv_heads)`. Only the visible band `row_start(i)..=i`
//! of each row is evaluated (in row tiles), so sliding-window layers cost `O(S·L)`.

use crate::attention::AttnMask;
use crate::error::{invalid, shape, Result};
use crate::numeric::ops::softmax_suffix;
use crate::numeric::{gemm, Real, Tensor};
use crate::par::{self, Parallelism};

/// Dimensions shared by the forward and backward kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLayout {
    pub n_query_heads: usize,
    pub n_kv_heads: usize,
    pub len: usize,
    pub head_dim: usize,
}

impl HeadLayout {
    pub fn new(n_query_heads: usize, n_kv_heads: usize, len: usize, head_dim: usize) -> Result<Self> {
        if n_kv_heads == 0 || n_query_heads % n_kv_heads != 0 {
            return Err(invalid(format!(
                "n_query_heads ({n_query_heads}) must be divisible by n_kv_heads ({n_kv_heads})"
            )));
        }
        Ok(Self { n_query_heads, n_kv_heads, len, head_dim })
    }

    pub fn group(&self) -> usize {
        self.n_query_heads / self.n_kv_heads
    }

    fn check(&self, q: &[usize], k: &[usize], v: &[usize], mask: &AttnMask) -> Result<()> {
        let want_q = [self.n_query_heads, self.len, self.head_dim];
        let want_kv = [self.n_kv_heads, self.len, self.head_dim];
        if q != want_q || k != want_kv || v != want_kv {
            return Err(shape(format!("attend expects q {want_q:?}, k/v {want_kv:?}; got {q:?}, {k:?}, {v:?}")));
        }
        if mask.len() != self.len {
            return Err(shape(format!("mask length {} vs sequence {}", mask.len(), self.len)));
        }
        Ok(())
    }
}

/// Rows are processed in tiles of this many queries.
const ROW_BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    r0: usize,
    r1: usize,
    c0: usize,
    offset: usize,
}

impl Block {
    fn rows(&self) -> usize {
        self.r1 - self.r0
    }

    fn width(&self) -> usize {
        self.r1 - self.c0
    }
}

/// Tiling of the visible band: each tile covers query rows `r0..r1` and key
/// columns `c0..r1`, where `c0` is the first key visible from row `r0`.
/// Weights are stored per tile, so storage follows the band, not `len²`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct BlockPlan {
    blocks: Vec<Block>,
    per_head: usize,
}

impl BlockPlan {
    pub(crate) fn new(mask: &AttnMask) -> Self {
        let len = mask.len();
        let mut blocks = Vec::with_capacity(len.div_ceil(ROW_BLOCK));
        let mut offset = 0;
        let mut r0 = 0;
        while r0 < len {
            let r1 = (r0 + ROW_BLOCK).min(len);
            let b = Block { r0, r1, c0: mask.row_start(r0), offset };
            offset += b.rows() * b.width();
            blocks.push(b);
            r0 = r1;
        }
        Self { blocks, per_head: offset }
    }

    /// Expands tiled weights of `heads` heads to dense `[heads, len, len]`.
    pub(crate) fn expand<T: Real, U: Real>(&self, tiled: &[T], heads: usize, len: usize) -> Vec<U> {
        let mut dense = vec![U::zero(); heads * len * len];
        for h in 0..heads {
            let src = &tiled[h * self.per_head..(h + 1) * self.per_head];
            for b in &self.blocks {
                let w = b.width();
                for r in 0..b.rows() {
                    let row = &src[b.offset + r * w..b.offset + (r + 1) * w];
                    let dst = &mut dense[(h * len + b.r0 + r) * len + b.c0..][..w];
                    for (d, &x) in dst.iter_mut().zip(row) {
                        *d = U::of(x.f64());
                    }
                }
            }
        }
        dense
    }
}

/// Forward pass. Returns the output and, when `keep_probs`, the tiled weights
/// (see [`BlockPlan`]).
pub(crate) fn attend_forward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    layout: HeadLayout,
    mask: &AttnMask,
    keep_probs: bool,
    policy: Parallelism,
) -> (Vec<T>, Option<Vec<T>>) {
    let HeadLayout { len, head_dim: d, .. } = layout;
    let group = layout.group();
    let scale = T::one() / T::of(d as f64).sqrt();
    let plan = BlockPlan::new(mask);
    let per_head = par::map_range(policy, layout.n_query_heads, |h| {
        let kh = h / group;
        let qh = &q[h * len * d..(h + 1) * len * d];
        let kv_off = kh * len * d;
        let kk = &k[kv_off..kv_off + len * d];
        let vv = &v[kv_off..kv_off + len * d];
        let mut out = vec![T::zero(); len * d];
        let mut probs = vec![T::zero(); if keep_probs { plan.per_head } else { 0 }];
        let mut scratch = Vec::new();
        for b in &plan.blocks {
            let (rows, w) = (b.rows(), b.width());
            let tile: &mut [T] = if keep_probs {
                &mut probs[b.offset..b.offset + rows * w]
            } else {
                scratch.resize(rows * w, T::zero());
                &mut scratch[..]
            };
            T::gemm_strided(
                rows,
                d,
                w,
                scale,
                &qh[b.r0 * d..],
                d as isize,
                1,
                &kk[b.c0 * d..],
                1,
                d as isize,
                T::zero(),
                tile,
            );
            for r in 0..rows {
                let i = b.r0 + r;
                let lo = mask.row_start(i) - b.c0;
                let hi = i - b.c0 + 1;
                let row = &mut tile[r * w..(r + 1) * w];
                softmax_suffix(&mut row[..hi], lo);
                row[hi..].iter_mut().for_each(|x| *x = T::zero());
            }
            gemm(rows, w, d, tile, false, &vv[b.c0 * d..b.r1 * d], false, T::zero(), &mut out[b.r0 * d..b.r1 * d]);
        }
        (out, probs)
    });
    let mut output = Vec::with_capacity(layout.n_query_heads * len * d);
    let mut all_probs = Vec::with_capacity(if keep_probs { layout.n_query_heads * plan.per_head } else { 0 });
    for (o, p) in per_head {
        output.extend(o);
        all_probs.extend(p);
    }
    (output, keep_probs.then_some(all_probs))
}

/// Backward pass given the tiled weights; returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend_backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    d_out: &[T],
    layout: HeadLayout,
    mask: &AttnMask,
    policy: Parallelism,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let HeadLayout { len, head_dim: d, .. } = layout;
    let group = layout.group();
    let scale = T::one() / T::of(d as f64).sqrt();
    let plan = BlockPlan::new(mask);
    // One task per kv head so that dk/dv accumulation never crosses tasks.
    let per_kv = par::map_range(policy, layout.n_kv_heads, |kh| {
        let kv_off = kh * len * d;
        let kk = &k[kv_off..kv_off + len * d];
        let vv = &v[kv_off..kv_off + len * d];
        let mut dq = vec![T::zero(); group * len * d];
        let mut dk = vec![T::zero(); len * d];
        let mut dv = vec![T::zero(); len * d];
        let mut ds = Vec::new();
        for g in 0..group {
            let h = kh * group + g;
            let qh = &q[h * len * d..(h + 1) * len * d];
            let doh = &d_out[h * len * d..(h + 1) * len * d];
            let ph = &probs[h * plan.per_head..(h + 1) * plan.per_head];
            let dqh = &mut dq[g * len * d..(g + 1) * len * d];
            for b in &plan.blocks {
                let (rows, w) = (b.rows(), b.width());
                let p = &ph[b.offset..b.offset + rows * w];
                let rows_q = &qh[b.r0 * d..b.r1 * d];
                let rows_do = &doh[b.r0 * d..b.r1 * d];
                ds.resize(rows * w, T::zero());
                // dP = dO · Vᵀ
                T::gemm_strided(rows, d, w, T::one(), rows_do, d as isize, 1, &vv[b.c0 * d..], 1, d as isize, T::zero(), &mut ds);
                for r in 0..rows {
                    let pr = &p[r * w..(r + 1) * w];
                    let dr = &mut ds[r * w..(r + 1) * w];
                    let weighted: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                    for (x, &pv) in dr.iter_mut().zip(pr) {
                        *x = pv * (*x - weighted) * scale;
                    }
                }
                gemm(rows, w, d, &ds, false, &kk[b.c0 * d..b.r1 * d], false, T::one(), &mut dqh[b.r0 * d..b.r1 * d]);
                gemm(w, rows, d, &ds, true, rows_q, false, T::one(), &mut dk[b.c0 * d..b.r1 * d]);
                gemm(w, rows, d, p, true, rows_do, false, T::one(), &mut dv[b.c0 * d..b.r1 * d]);
            }
        }
        (dq, dk, dv)
    });
    let mut dq = Vec::with_capacity(q.len());
    let mut dk = Vec::with_capacity(k.len());
    let mut dv = Vec::with_capacity(v.len());
    for (a, b, c) in per_kv {
        dq.extend(a);
        dk.extend(b);
        dv.extend(c);
    }
    (dq, dk, dv)
}

/// Result of [`attend`]: the attended values and, when captured, the dense
/// `[n_query_heads, len, len]` weights in double precision.
#[derive(Debug, Clone)]
pub struct Attended<T> {
    pub output: Tensor<T>,
    pub weights: Option<Tensor<f64>>,
}

pub fn attend<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: &AttnMask,
    n_query_heads: usize,
    n_kv_heads: usize,
    capture: bool,
) -> Result<Attended<T>> {
    let len = q.shape().get(1).copied().unwrap_or(0);
    let d = q.shape().get(2).copied().unwrap_or(0);
    let layout = HeadLayout::new(n_query_heads, n_kv_heads, len, d)?;
    layout.check(q.shape(), k.shape(), v.shape(), mask)?;
    let (out, probs) = attend_forward(q.data(), k.data(), v.data(), layout, mask, capture, Parallelism::default());
    let output = Tensor::new(vec![n_query_heads, len, d], out)?;
    let weights = probs
        .map(|p| Tensor::new(vec![n_query_heads, len, len], BlockPlan::new(mask).expand(&p, n_query_heads, len)))
        .transpose()?;
    Ok(Attended { output, weights })
}
