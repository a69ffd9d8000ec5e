//! Forward kernels shared by the tape, the attention code and the analysis paths.

use crate::error::{shape, Error, Result};
use crate::numeric::{Real, Tensor};

/// Softmax over the last axis with the row maximum subtracted first.
///
/// `mask`, when given, has the same length as `logits` and marks the entries
/// that may receive weight; masked entries come out as exact zeros.
pub fn softmax_stable<T: Real>(logits: &Tensor<T>, mask: Option<&[bool]>) -> Result<Tensor<T>> {
    if let Some(m) = mask {
        if m.len() != logits.len() {
            return Err(shape(format!("mask length {} vs logits {}", m.len(), logits.len())));
        }
    }
    let n = logits.last_dim();
    let mut out = logits.clone();
    if n == 0 {
        return Ok(out);
    }
    for (r, row) in out.data_mut().chunks_mut(n).enumerate() {
        let row_mask = mask.map(|m| &m[r * n..(r + 1) * n]);
        softmax_row(row, row_mask)?;
    }
    Ok(out)
}

/// In-place masked softmax of one row.
pub fn softmax_row<T: Real>(row: &mut [T], mask: Option<&[bool]>) -> Result<()> {
    let allowed = |j: usize| mask.map_or(true, |m| m[j]);
    let mut max = T::neg_infinity();
    for (j, &x) in row.iter().enumerate() {
        if allowed(j) && x > max {
            max = x;
        }
    }
    if max == T::neg_infinity() {
        return Err(Error::EmptyAttentionRow);
    }
    let mut total = T::zero();
    for (j, x) in row.iter_mut().enumerate() {
        if allowed(j) {
            *x = (*x - max).exp();
            total += *x;
        } else {
            *x = T::zero();
        }
    }
    let inv = T::one() / total;
    row.iter_mut().for_each(|x| *x *= inv);
    Ok(())
}

/// Softmax restricted to the contiguous window `row[lo..]`; entries before `lo`
/// are zeroed. Used by the banded attention kernel.
pub(crate) fn softmax_suffix<T: Real>(row: &mut [T], lo: usize) {
    row[..lo].iter_mut().for_each(|x| *x = T::zero());
    let live = &mut row[lo..];
    let max = live.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in live.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    let inv = T::one() / total;
    live.iter_mut().for_each(|x| *x *= inv);
}

/// `gain ⊙ (x − mean) / sqrt(var + eps)` with population variance and no bias.
pub fn layer_norm<T: Real>(x: &[T], gain: &[T], eps: T) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    layer_norm_into(x, gain, eps, &mut out);
    out
}

/// Writes the normalized row into `out` and returns `1/sqrt(var + eps)`.
pub(crate) fn layer_norm_into<T: Real>(x: &[T], gain: &[T], eps: T, out: &mut [T]) -> T {
    assert_eq!(x.len(), gain.len(), "layer_norm gain length");
    let n = T::of(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let denom = (var + eps).sqrt();
    // Zero variance with eps = 0 collapses to the zero vector.
    let inv = if denom > T::zero() { T::one() / denom } else { T::zero() };
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = g * (v - mean) * inv;
    }
    inv
}

/// RMS normalization: `gain ⊙ x / sqrt(mean(x²) + eps)`. Returns the inverse rms.
pub(crate) fn rms_norm_into<T: Real>(x: &[T], gain: &[T], eps: T, out: &mut [T]) -> T {
    let n = T::of(x.len() as f64);
    let ms = x.iter().map(|&v| v * v).sum::<T>() / n;
    let inv = T::one() / (ms + eps).sqrt();
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = g * v * inv;
    }
    inv
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub(crate) fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

/// Index of the largest entry; the first wins on ties.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
