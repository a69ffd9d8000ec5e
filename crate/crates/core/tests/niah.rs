use hybrid_attn::model::{build_layer_pattern, Model, ModelConfig, Variant};
use hybrid_attn::niah::*;
use hybrid_attn::Parallelism;
use proptest::prelude::*;

#[test]
fn copy_head_oracle_scores_ten_on_the_default_grid_shape() {
    let vocab = TaskVocab { vocab_size: 200, n_keys: 40, n_values: 40, value_len: 1 };
    let grid = NeedlesGrid { lengths: vec![64, 256, 1024], seeds_per_cell: 4, seed: 11, ..NeedlesGrid::default() };
    let r = score_grid(&CopyHead::new(200), &grid, &vocab, Parallelism::Sequential).unwrap();
    assert_eq!(r.cells.len(), 3 * 5 * 4);
    assert_eq!(r.score(), 10.0);
}

#[test]
fn untrained_model_is_near_chance() {
    let cfg = ModelConfig { emb_dim: 32, ffn_dim: 64, n_layers: 2, n_query_heads: 2, n_kv_heads: 1, vocab_size: 128, max_seq: 256 };
    let m: Model<f32> = Model::init(cfg, build_layer_pattern(2, (1, 1), 16, 1e4, Variant::RnopeSwa).unwrap(), 0).unwrap();
    let vocab = TaskVocab { vocab_size: 128, n_keys: 16, n_values: 32, value_len: 1 };
    let grid = NeedlesGrid { lengths: vec![128], depths: vec![0.0, 0.5, 1.0], seeds_per_cell: 8, seed: 1 };
    assert!(score_grid(&m, &grid, &vocab, Parallelism::Rayon).unwrap().score() <= 1.5);
}

proptest! {
    #[test]
    fn sample_layout(len in 8usize..600, depth in 0.0f64..=1.0, seed in any::<u64>()) {
        let vocab = TaskVocab { vocab_size: 64, n_keys: 8, n_values: 8, value_len: 2 };
        let s = make_sample(len, depth, seed, &vocab).unwrap();
        prop_assert_eq!(s.tokens.len(), len);
        prop_assert_eq!(s.tokens[s.needle_span.0], KEY_MARK);
        prop_assert_eq!(s.tokens[s.needle_span.0 + 1], s.key);
        prop_assert_eq!(&s.tokens[s.needle_span.0 + 2..s.needle_span.1], &s.answer[..]);
        prop_assert_eq!(s.query_span, (len - 2, len));
        prop_assert!(s.needle_span.1 <= s.query_span.0);
        prop_assert_eq!(s.tokens.iter().filter(|&&t| t == KEY_MARK).count(), 1);
    }
}
