use hybrid_attn::analysis::*;
use hybrid_attn::attention::{AttentionTrace, LayerKind};
use hybrid_attn::model::{build_layer_pattern, Model, ModelConfig, Variant};
use hybrid_attn::niah::{make_sample, TaskVocab};
use proptest::prelude::*;

/// Reference NoPE-layer masses for RNoPE-10k-swa at 32k: begin, needle,
/// context, end.
const SWA_32K_NOPE: [f64; 4] = [0.3303, 0.0742, 0.5634, 0.0321];

fn random_trace(len: usize, heads: usize, layers: usize, seed: u64) -> AttentionTrace {
    let mut t = AttentionTrace::new(len, heads);
    let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    for _ in 0..layers {
        let mut w = vec![0.0; heads * len * len];
        for h in 0..heads {
            for i in 0..len {
                let row = &mut w[(h * len + i) * len..(h * len + i + 1) * len];
                for v in row.iter_mut().take(i + 1) {
                    x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    *v = ((x >> 11) as f64 / (1u64 << 53) as f64) + 1e-3;
                }
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        t.push_layer(LayerKind::NopeFull, w).unwrap();
    }
    t
}

proptest! {
    #[test]
    fn segment_masses_sum_to_one(len in 24usize..64, seed in any::<u64>(), n0 in 10usize..14, nl in 1usize..4) {
        let t = random_trace(len, 2, 2, seed);
        let spans = SegmentSpans::new(len, (n0, n0 + nl), (len - 3, len)).unwrap();
        for hm in attention_mass(&t, &spans).unwrap() {
            prop_assert!((hm.mass.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn uniform_end_rows_give_quarter_mass_per_equal_segment() {
    // Four segments of 10 tokens; the end rows attend uniformly over all keys.
    let len = 40;
    let mut w = vec![0.0; len * len];
    for i in 30..len {
        for j in 0..len {
            w[i * len + j] = 1.0 / len as f64;
        }
    }
    for i in 0..30 {
        w[i * len] = 1.0;
    }
    let mut t = AttentionTrace::new(len, 1);
    t.push_layer(LayerKind::NopeFull, w).unwrap();
    let spans = SegmentSpans::new(len, (10, 20), (30, 40)).unwrap();
    let hm = attention_mass(&t, &spans).unwrap();
    for m in hm[0].mass {
        assert!((m - 0.25).abs() < 1e-12, "{m}");
    }
}

#[test]
fn reference_swa_row_sums_to_one() {
    assert!((SWA_32K_NOPE.iter().sum::<f64>() - 1.0).abs() < 1e-4);
}

#[test]
fn uniform_row_entropy_is_log_n() {
    for n in [1usize, 2, 7, 100, 4096] {
        let row = vec![1.0 / n as f64; n];
        assert!((row_entropy(&row) - (n as f64).ln()).abs() < 1e-6);
    }
}

#[test]
fn swa_rope_layers_put_no_mass_on_a_distant_needle() {
    let cfg = ModelConfig { emb_dim: 32, ffn_dim: 64, n_layers: 4, n_query_heads: 2, n_kv_heads: 1, vocab_size: 128, max_seq: 512 };
    let window = 32;
    let pattern = build_layer_pattern(4, (1, 3), window, 10_000.0, Variant::RnopeSwa).unwrap();
    let model: Model<f64> = Model::init(cfg, pattern, 5).unwrap();
    let vocab = TaskVocab { vocab_size: 128, n_keys: 16, n_values: 16, value_len: 1 };
    let s = make_sample(512, 0.5, 9, &vocab).unwrap();
    assert!(s.query_span.0 - s.needle_span.1 > window);
    let trace = model.forward(&s.tokens, true).unwrap().trace.unwrap();
    let spans = SegmentSpans::new(512, s.needle_span, s.query_span).unwrap();

    let heads = attention_mass(&trace, &spans).unwrap();
    let rope_needle: Vec<f64> = heads.iter().filter(|h| h.kind.family() == "rope").map(|h| h.get(Segment::Needle)).collect();
    assert_eq!(rope_needle.len(), 6);
    assert!(rope_needle.iter().all(|&m| m == 0.0));
    assert!(heads.iter().filter(|h| h.kind.family() == "nope").all(|h| h.get(Segment::Needle) > 0.0));
}
