use crate::error::{shape, Result};
use crate::numeric::ops::layer_norm_into;
use crate::numeric::{Real, Tensor};

/// Learnable QK-Norm gains, shared by all heads of a layer, plus epsilon.
#[derive(Debug, Clone, PartialEq)]
pub struct QkNormParams<T = f64> {
    pub q_gain: Vec<T>,
    pub k_gain: Vec<T>,
    pub eps: T,
}

impl<T: Real> QkNormParams<T> {
    /// Unit gains.
    pub fn identity(head_dim: usize, eps: T) -> Self {
        Self { q_gain: vec![T::one(); head_dim], k_gain: vec![T::one(); head_dim], eps }
    }
}

/// Layer-normalizes every `(head, position)` row of `q` and `k` along the head
/// dimension. Must run before the RoPE rotation.
pub fn apply_qk_norm<T: Real>(q: &Tensor<T>, k: &Tensor<T>, params: &QkNormParams<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let norm = |x: &Tensor<T>, gain: &[T]| -> Result<Tensor<T>> {
        let d = x.last_dim();
        if d != gain.len() {
            return Err(shape(format!("qk-norm gain length {} vs head_dim {d}", gain.len())));
        }
        let mut out = Tensor::zeros(x.shape());
        for (src, dst) in x.data().chunks(d).zip(out.data_mut().chunks_mut(d)) {
            layer_norm_into(src, gain, params.eps, dst);
        }
        Ok(out)
    };
    Ok((norm(q, &params.q_gain)?, norm(k, &params.k_gain)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn examples() {
        let p = QkNormParams::identity(2, 0.0);
        let q = Tensor::new(vec![1, 1, 2], vec![1.0, -1.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 2], vec![0.5, 0.5]).unwrap();
        let (qn, kn) = apply_qk_norm(&q, &k, &p).unwrap();
        assert_eq!(qn.data(), &[1.0, -1.0]);
        assert_eq!(kn.data(), &[0.0, 0.0]);
    }

    #[test]
    fn normalized_rows_have_zero_mean_and_norm_head_dim() {
        let d = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = Tensor::new(vec![2, 5, d], (0..2 * 5 * d).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let (qn, _) = apply_qk_norm(&q, &q, &QkNormParams::identity(d, 1e-12)).unwrap();
        for row in qn.data().chunks(d) {
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let sq: f64 = row.iter().map(|x| x * x).sum();
            assert!(mean.abs() < 1e-6);
            assert!((sq - d as f64).abs() < 1e-3);
        }
    }
}
