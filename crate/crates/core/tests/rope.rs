use hybrid_attn::attention::{apply_rope, build_rope_cache};
use hybrid_attn::Tensor;
use proptest::prelude::*;

fn rotate(x: &[f64], pos: usize, theta: f64) -> Vec<f64> {
    let d = x.len();
    let cache = build_rope_cache(theta, d, pos + 1).unwrap();
    apply_rope(&Tensor::new(vec![1, 1, d], x.to_vec()).unwrap(), &[pos], &cache).unwrap().data().to_vec()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn vec_of(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, d)
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::sample::select(vec![2usize, 8, 64]).prop_flat_map(|d| (vec_of(d), vec_of(d)))
}

proptest! {
    #[test]
    fn scores_depend_only_on_offset((q, k) in pair(), m in 0usize..200, n in 0usize..200, t in prop::sample::select(vec![1usize, 5, 100])) {
        let a = dot(&rotate(&q, m, 1e4), &rotate(&k, n, 1e4));
        let b = dot(&rotate(&q, m + t, 1e4), &rotate(&k, n + t, 1e4));
        prop_assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }

    #[test]
    fn rotation_preserves_norm(x in prop::sample::select(vec![2usize, 8, 64]).prop_flat_map(vec_of), p in 0usize..5000, theta in 10.0f64..1e7) {
        let y = rotate(&x, p, theta);
        prop_assert!((dot(&x, &x).sqrt() - dot(&y, &y).sqrt()).abs() < 1e-6);
    }
}

#[test]
fn position_zero_is_exact_identity() {
    let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
    assert_eq!(rotate(&x, 0, 1e4), x);
}

#[test]
fn batched_positions_match_single_rotations() {
    let d = 8;
    let cache = build_rope_cache(1e4, d, 64).unwrap();
    let data: Vec<f64> = (0..2 * 3 * d).map(|i| (i as f64).cos()).collect();
    let positions = [3usize, 0, 40];
    let y = apply_rope(&Tensor::new(vec![2, 3, d], data.clone()).unwrap(), &positions, &cache).unwrap();
    for h in 0..2 {
        for (r, &p) in positions.iter().enumerate() {
            let off = (h * 3 + r) * d;
            let want = rotate(&data[off..off + d], p, 1e4);
            for (a, b) in y.data()[off..off + d].iter().zip(&want) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }
}
