use crate::error::{invalid, shape, Error, Result};
use crate::numeric::{Real, Tensor};

/// Precomputed RoPE angles for positions `0..max_pos`.
///
/// Entry `(p, i)` holds `cos/sin(p · θ^(−2i/d))`. Dimension pairs are adjacent:
/// `(2i, 2i+1)` rotate together.
#[derive(Debug, Clone, PartialEq)]
pub struct RopeCache {
    theta: f64,
    head_dim: usize,
    max_pos: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RopeCache {
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn max_pos(&self) -> usize {
        self.max_pos
    }

    /// Rotation frequency of pair `i`.
    pub fn frequency(&self, i: usize) -> f64 {
        frequency(self.theta, self.head_dim, i)
    }

    pub fn cos_row(&self, pos: usize) -> &[f64] {
        let h = self.head_dim / 2;
        &self.cos[pos * h..(pos + 1) * h]
    }

    pub fn sin_row(&self, pos: usize) -> &[f64] {
        let h = self.head_dim / 2;
        &self.sin[pos * h..(pos + 1) * h]
    }

    pub(crate) fn check_positions(&self, positions: &[usize]) -> Result<()> {
        match positions.iter().find(|&&p| p >= self.max_pos) {
            Some(&pos) => Err(Error::PositionOutOfRange { pos, max_pos: self.max_pos }),
            None => Ok(()),
        }
    }
}

fn frequency(theta: f64, d: usize, i: usize) -> f64 {
    theta.powf(-2.0 * i as f64 / d as f64)
}

pub fn build_rope_cache(theta: f64, head_dim: usize, max_pos: usize) -> Result<RopeCache> {
    if head_dim == 0 || head_dim % 2 != 0 {
        return Err(invalid(format!("rope head_dim must be even and positive, got {head_dim}")));
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(invalid(format!("rope theta must be positive, got {theta}")));
    }
    if max_pos == 0 {
        return Err(invalid("rope max_pos must be at least 1"));
    }
    let half = head_dim / 2;
    let freqs: Vec<f64> = (0..half).map(|i| frequency(theta, head_dim, i)).collect();
    let mut cos = Vec::with_capacity(max_pos * half);
    let mut sin = Vec::with_capacity(max_pos * half);
    for p in 0..max_pos {
        for &f in &freqs {
            let (s, c) = (p as f64 * f).sin_cos();
            cos.push(c);
            sin.push(s);
        }
    }
    Ok(RopeCache { theta, head_dim, max_pos, cos, sin })
}

/// Rotates every `(2i, 2i+1)` pair of a `[heads, len, d]` buffer in place.
/// `inverse` applies the transpose rotation (used by the backward pass).
pub(crate) fn rotate_in_place<T: Real>(
    data: &mut [T],
    len: usize,
    positions: &[usize],
    cache: &RopeCache,
    inverse: bool,
) {
    let d = cache.head_dim;
    for (row_idx, row) in data.chunks_mut(d).enumerate() {
        let pos = positions[row_idx % len];
        let (cos, sin) = (cache.cos_row(pos), cache.sin_row(pos));
        for (i, pair) in row.chunks_mut(2).enumerate() {
            let c = T::of(cos[i]);
            let s = if inverse { -T::of(sin[i]) } else { T::of(sin[i]) };
            let (x0, x1) = (pair[0], pair[1]);
            pair[0] = x0 * c - x1 * s;
            pair[1] = x0 * s + x1 * c;
        }
    }
}

/// Applies RoPE to `x` of shape `[heads, len, head_dim]`; `positions[t]` is the
/// absolute position of token `t`.
pub fn apply_rope<T: Real>(x: &Tensor<T>, positions: &[usize], cache: &RopeCache) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 3 || s[2] != cache.head_dim || s[1] != positions.len() {
        return Err(shape(format!(
            "apply_rope expects [heads, {}, {}], got {s:?}",
            positions.len(),
            cache.head_dim
        )));
    }
    cache.check_positions(positions)?;
    let mut out = x.clone();
    rotate_in_place(out.data_mut(), s[1], positions, cache, false);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cache_examples() {
        let c = build_rope_cache(10_000.0, 4, 8).unwrap();
        assert!((c.frequency(0) - 1.0).abs() < 1e-15);
        assert!((c.frequency(1) - 0.01).abs() < 1e-15);
        assert!(c.cos_row(0).iter().all(|&v| v == 1.0));
        assert!(c.sin_row(0).iter().all(|&v| v == 0.0));
        let c = build_rope_cache(2_000_000.0, 2, 4).unwrap();
        assert!((c.cos_row(1)[0] - 1f64.cos()).abs() < 1e-15);
        assert!((c.sin_row(1)[0] - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_rope_cache(10_000.0, 3, 8).is_err());
        assert!(build_rope_cache(0.0, 4, 8).is_err());
        let c = build_rope_cache(10_000.0, 2, 4).unwrap();
        let x = Tensor::<f64>::zeros(&[1, 1, 2]);
        assert!(matches!(apply_rope(&x, &[4], &c), Err(Error::PositionOutOfRange { pos: 4, .. })));
    }

    #[test]
    fn planar_rotation_by_hand() {
        let c = build_rope_cache(10_000.0, 2, 16).unwrap();
        let x = Tensor::new(vec![1, 1, 2], vec![1.0, 0.0]).unwrap();
        for p in [0usize, 1, 3, 11] {
            let y = apply_rope(&x, &[p], &c).unwrap();
            assert!((y.data()[0] - (p as f64).cos()).abs() < 1e-15);
            assert!((y.data()[1] - (p as f64).sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn inverse_undoes_rotation() {
        let c = build_rope_cache(500.0, 8, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..2 * 5 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let positions = [0, 7, 3, 31, 12];
        let mut buf = data.clone();
        rotate_in_place(&mut buf, 5, &positions, &c, false);
        rotate_in_place(&mut buf, 5, &positions, &c, true);
        for (a, b) in buf.iter().zip(&data) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
