use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hybrid_attn::attention::{build_mask, MaskKind};
use hybrid_attn::model::{build_layer_pattern, Model, ModelConfig, Variant};
use hybrid_attn::niah::{score_grid, NeedlesGrid, TaskVocab};
use hybrid_attn::par::{map_range, Parallelism};

const POLICIES: [Parallelism; 2] = [Parallelism::Sequential, Parallelism::Rayon];

fn desk_model(policy: Parallelism) -> Model<f32> {
    let cfg = ModelConfig { emb_dim: 64, ffn_dim: 192, n_layers: 8, n_query_heads: 4, n_kv_heads: 2, vocab_size: 512, max_seq: 2048 };
    let pattern = build_layer_pattern(8, (1, 3), 128, 10_000.0, Variant::RnopeSwa).unwrap();
    Model::init(cfg, pattern, 1).unwrap().with_parallelism(policy)
}

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward_1024");
    g.sample_size(10);
    let tokens: Vec<usize> = (0..1024).map(|i| (i * 37) % 512).collect();
    for p in POLICIES {
        let m = desk_model(p);
        g.bench_with_input(BenchmarkId::from_parameter(format!("{p:?}")), &m, |b, m| b.iter(|| m.forward(&tokens, false).unwrap()));
    }
    g.finish();
}

fn grid(c: &mut Criterion) {
    let mut g = c.benchmark_group("score_grid");
    g.sample_size(10);
    let grid = NeedlesGrid { lengths: vec![128, 256], depths: vec![0.0, 0.5, 1.0], seeds_per_cell: 2, seed: 0 };
    let vocab = TaskVocab { vocab_size: 100, n_keys: 32, n_values: 32, ..TaskVocab::default() };
    let m = desk_model(Parallelism::Sequential);
    for p in POLICIES {
        g.bench_function(format!("{p:?}"), |b| b.iter(|| score_grid(&m, &grid, &vocab, p).unwrap()));
    }
    g.finish();
}

fn mask_sweep(c: &mut Criterion) {
    let mut g = c.benchmark_group("mask_popcount_sweep");
    for p in POLICIES {
        g.bench_function(format!("{p:?}"), |b| {
            b.iter(|| {
                map_range(p, 256, |l| {
                    let len = l + 1;
                    let m = build_mask(len, MaskKind::CausalSwa, Some(32)).unwrap();
                    m.to_dense().iter().filter(|&&x| x).count()
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, forward, grid, mask_sweep);
criterion_main!(benches);
