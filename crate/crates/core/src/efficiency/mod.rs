//! Closed-form attention cost accounting: allowed query/key pairs, attention
//! FLOPs and KV-cache bytes for a layer pattern, relative to a baseline.
//!
//! Only analytical ratios are produced. End-to-end latency depends on
//! hardware, batching and kernels and is not modelled here.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attention::{LayerKind, MaskKind};
use crate::error::{invalid, Result};
use crate::model::{LayerPattern, LayerSpec, ModelConfig};

/// Multiply-adds per allowed pair and head dimension: one for `q·k`, one for
/// `p·v`, each counted as two FLOPs.
pub const FLOPS_PER_PAIR_DIM: u64 = 4;

/// Default KV-cache element width in bytes (half precision).
pub const DEFAULT_BYTES_PER_ELEM: u64 = 2;

pub const WALL_CLOCK_NOTE: &str =
    "ratios count attention pairs and cached keys/values only; end-to-end latency is hardware dependent and not modelled";

/// Visible (query, key) pairs for a mask kind over `len` positions.
pub fn mask_pair_count(len: u64, kind: MaskKind, window: Option<u64>) -> u64 {
    let full = len * (len + 1) / 2;
    match (kind, window) {
        (MaskKind::CausalSwa, Some(s)) if len >= s => s * (s + 1) / 2 + (len - s) * s,
        _ => full,
    }
}

/// Visible (query, key) pairs of one layer over `len` positions.
pub fn pair_count(len: u64, spec: &LayerSpec) -> u64 {
    mask_pair_count(len, spec.mask_kind, spec.window.map(|w| w as u64))
}

/// Cached positions per layer when decoding at context `len`.
fn cached_positions(len: u64, spec: &LayerSpec) -> u64 {
    match (spec.mask_kind, spec.window) {
        (MaskKind::CausalSwa, Some(s)) => len.min(s as u64),
        _ => len,
    }
}

/// Per-layer and total KV-cache bytes, with the all-full reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvCache {
    pub per_layer: Vec<u64>,
    pub total: u64,
    /// Same depth with every layer caching the whole context.
    pub all_full: u64,
    pub ratio: f64,
}

pub fn kv_cache_size(pattern: &LayerPattern, config: &ModelConfig, len: u64, bytes_per_elem: u64) -> KvCache {
    let per_pos = 2 * config.n_kv_heads as u64 * config.head_dim() as u64 * bytes_per_elem;
    let per_layer: Vec<u64> = pattern.layers.iter().map(|l| per_pos * cached_positions(len, l)).collect();
    let total = per_layer.iter().sum();
    let all_full = per_pos * len * pattern.len() as u64;
    let ratio = if all_full == 0 { 1.0 } else { total as f64 / all_full as f64 };
    KvCache { per_layer, total, all_full, ratio }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub index: usize,
    pub kind: LayerKind,
    pub allowed_pairs: u64,
    pub attn_flops: u128,
    pub kv_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTotals {
    pub allowed_pairs: u64,
    pub attn_flops: u128,
    pub kv_bytes: u64,
}

/// Cost of one pattern at one context length against a baseline pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub len: u64,
    pub layout: String,
    pub baseline_layout: String,
    pub layers: Vec<LayerCost>,
    pub total: CostTotals,
    pub baseline: CostTotals,
    pub pair_ratio: f64,
    pub flops_ratio: f64,
    pub kv_ratio: f64,
}

impl CostReport {
    /// KV-cache reduction vs. the baseline, in percent.
    pub fn kv_reduction_pct(&self) -> f64 {
        100.0 * (1.0 - self.kv_ratio)
    }
}

fn layer_costs(pattern: &LayerPattern, config: &ModelConfig, len: u64, bytes_per_elem: u64) -> Vec<LayerCost> {
    let kv = kv_cache_size(pattern, config, len, bytes_per_elem);
    let flops_per_pair = (FLOPS_PER_PAIR_DIM * config.head_dim() as u64 * config.n_query_heads as u64) as u128;
    pattern
        .layers
        .iter()
        .zip(kv.per_layer)
        .map(|(spec, kv_bytes)| {
            let allowed_pairs = pair_count(len, spec);
            LayerCost { index: spec.index, kind: spec.kind(), allowed_pairs, attn_flops: allowed_pairs as u128 * flops_per_pair, kv_bytes }
        })
        .collect()
}

fn totals(layers: &[LayerCost]) -> CostTotals {
    CostTotals {
        allowed_pairs: layers.iter().map(|l| l.allowed_pairs).sum(),
        attn_flops: layers.iter().map(|l| l.attn_flops).sum(),
        kv_bytes: layers.iter().map(|l| l.kv_bytes).sum(),
    }
}

fn ratio(a: impl Into<u128>, b: impl Into<u128>) -> f64 {
    let (a, b) = (a.into(), b.into());
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

/// One [`CostReport`] per context length in `lens`.
pub fn efficiency_report(
    baseline: &LayerPattern,
    hybrid: &LayerPattern,
    config: &ModelConfig,
    lens: &[u64],
    bytes_per_elem: u64,
) -> Result<Vec<CostReport>> {
    if lens.contains(&0) {
        return Err(invalid("context lengths must be ≥ 1"));
    }
    let (layout, baseline_layout) = (hybrid.to_string(), baseline.to_string());
    Ok(lens
        .iter()
        .map(|&len| {
            let layers = layer_costs(hybrid, config, len, bytes_per_elem);
            let total = totals(&layers);
            let base = totals(&layer_costs(baseline, config, len, bytes_per_elem));
            CostReport {
                len,
                layout: layout.clone(),
                baseline_layout: baseline_layout.clone(),
                layers,
                pair_ratio: ratio(total.allowed_pairs, base.allowed_pairs),
                flops_ratio: ratio(total.attn_flops, base.attn_flops),
                kv_ratio: ratio(total.kv_bytes, base.kv_bytes),
                total,
                baseline: base,
            }
        })
        .collect())
}

pub const COST_CSV_HEADER: [&str; 12] = [
    "L",
    "layout",
    "baseline_layout",
    "allowed_pairs",
    "baseline_pairs",
    "pair_ratio",
    "attn_flops",
    "baseline_attn_flops",
    "kv_bytes",
    "baseline_kv_bytes",
    "kv_ratio",
    "kv_reduction_pct",
];

/// Writes one row per report.
pub fn write_cost_csv<W: Write>(reports: &[CostReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COST_CSV_HEADER)?;
    for r in reports {
        w.write_record([
            r.len.to_string(),
            r.layout.clone(),
            r.baseline_layout.clone(),
            r.total.allowed_pairs.to_string(),
            r.baseline.allowed_pairs.to_string(),
            format!("{:.6}", r.pair_ratio),
            r.total.attn_flops.to_string(),
            r.baseline.attn_flops.to_string(),
            r.total.kv_bytes.to_string(),
            r.baseline.kv_bytes.to_string(),
            format!("{:.6}", r.kv_ratio),
            format!("{:.4}", r.kv_reduction_pct()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CostJson<'a> {
    note: &'a str,
    flops_per_pair_dim: u64,
    reports: &'a [CostReport],
}

pub fn cost_json(reports: &[CostReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&CostJson { note: WALL_CLOCK_NOTE, flops_per_pair_dim: FLOPS_PER_PAIR_DIM, reports })?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::build_mask;
    use crate::model::{build_layer_pattern, Variant};

    fn full_scale() -> (ModelConfig, LayerPattern, LayerPattern) {
        let cfg = ModelConfig { emb_dim: 4096, ffn_dim: 14336, n_layers: 32, n_query_heads: 32, n_kv_heads: 8, vocab_size: 256_000, max_seq: 131_072 };
        let hybrid = build_layer_pattern(32, (1, 3), 4096, 10_000.0, Variant::RnopeSwa).unwrap();
        let base = build_layer_pattern(32, (1, 3), 0, 10_000.0, Variant::RopeBaseline).unwrap();
        (cfg, hybrid, base)
    }

    #[test]
    fn pair_count_examples() {
        assert_eq!(mask_pair_count(8, MaskKind::CausalFull, None), 36);
        assert_eq!(mask_pair_count(8, MaskKind::CausalSwa, Some(3)), 21);
        assert_eq!(mask_pair_count(2, MaskKind::CausalSwa, Some(5)), 3);
    }

    #[test]
    fn pair_count_matches_mask_walk() {
        for len in [1usize, 7, 64, 130] {
            for s in [1usize, 2, 5, 64, 200] {
                let m = build_mask(len, MaskKind::CausalSwa, Some(s)).unwrap();
                assert_eq!(mask_pair_count(len as u64, MaskKind::CausalSwa, Some(s as u64)), m.allowed_pairs());
            }
        }
    }

    #[test]
    fn kv_ratio_at_128k() {
        let (cfg, hybrid, _) = full_scale();
        let kv = kv_cache_size(&hybrid, &cfg, 131_072, DEFAULT_BYTES_PER_ELEM);
        assert!((kv.ratio - 0.2734375).abs() < 1e-12);
        assert_eq!(kv.per_layer[0], 2 * 8 * 128 * 2 * 4096);
    }

    #[test]
    fn windows_inactive_below_s() {
        let (cfg, hybrid, _) = full_scale();
        assert_eq!(kv_cache_size(&hybrid, &cfg, 4096, 2).ratio, 1.0);
        assert_eq!(kv_cache_size(&hybrid, &cfg, 100, 2).ratio, 1.0);
    }

    #[test]
    fn one_in_eight_asymptote() {
        let (cfg, _, _) = full_scale();
        let p = build_layer_pattern(32, (1, 7), 4096, 10_000.0, Variant::RnopeSwa).unwrap();
        let kv = kv_cache_size(&p, &cfg, 1_000_000, 2);
        let expected = 1.0 / 8.0 + (7.0 / 8.0) * 4096.0 / 1e6;
        assert!((kv.ratio - expected).abs() < 1e-12);
        assert!((1.0 - kv.ratio - 0.875).abs() < 0.01);
    }

    #[test]
    fn report_pair_ratios() {
        let (cfg, hybrid, base) = full_scale();
        let r = efficiency_report(&base, &hybrid, &cfg, &[65_536, 131_072], 2).unwrap();
        assert_eq!(r[0].baseline.allowed_pairs, 32 * 2_147_516_416);
        assert_eq!(r[0].total.allowed_pairs, 8 * 2_147_516_416 + 24 * 260_048_896);
        assert!((r[0].pair_ratio - 0.3408).abs() < 5e-4);
        assert!((r[1].pair_ratio - 0.2961).abs() < 5e-4);
        assert_eq!(r[0].pair_ratio, r[0].flops_ratio);
        assert!((r[1].kv_reduction_pct() - 72.65625).abs() < 1e-9);
    }

    #[test]
    fn identical_patterns_give_unit_ratios() {
        let (cfg, hybrid, _) = full_scale();
        for r in efficiency_report(&hybrid, &hybrid, &cfg, &[10, 5000, 100_000], 2).unwrap() {
            assert_eq!((r.pair_ratio, r.kv_ratio, r.flops_ratio), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn csv_has_one_row_per_length() {
        let (cfg, hybrid, base) = full_scale();
        let r = efficiency_report(&base, &hybrid, &cfg, &[1024, 131_072], 2).unwrap();
        let mut buf = Vec::new();
        write_cost_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(2).unwrap().contains(",0.273438,"));
    }
}
