use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::spans::BEGIN_LEN;
use crate::attention::AttentionTrace;
use crate::error::{invalid, Result};

/// Fraction of trailing positions dropped before smoothing.
pub const TAIL_FRACTION: f64 = 0.03;
/// Widest moving-average window.
pub const SMOOTH_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyMode {
    #[default]
    Raw,
    Preprocessed,
}

impl EntropyMode {
    pub fn name(self) -> &'static str {
        match self {
            EntropyMode::Raw => "raw",
            EntropyMode::Preprocessed => "preprocessed",
        }
    }
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn row_entropy(row: &[f64]) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Centered moving average with window `w`; near the edges the window is
/// truncated and the mean taken over what remains. Output `t` averages
/// `[t - w/2, t - w/2 + w)`.
pub fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let w = w.clamp(1, n.max(1));
    let mut prefix = vec![0.0; n + 1];
    for (i, &v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(w / 2);
            let hi = (t + w - w / 2).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Drops the first 10 positions and the last `ceil(0.03·L)`, then smooths
/// with a window of `min(100, remaining)`.
pub fn preprocess_distribution(row: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = retained_range(row.len())?;
    let kept = &row[lo..hi];
    Ok(moving_average(kept, SMOOTH_WINDOW.min(kept.len())))
}

/// Indices kept by [`preprocess_distribution`].
pub fn retained_range(len: usize) -> Result<(usize, usize)> {
    let tail = (TAIL_FRACTION * len as f64).ceil() as usize;
    if len <= BEGIN_LEN + tail {
        return Err(invalid(format!("row of {len} positions is too short to trim {BEGIN_LEN} + {tail}")));
    }
    Ok((BEGIN_LEN, len - tail))
}

fn mode_entropy(row: &[f64], mode: EntropyMode) -> Result<f64> {
    match mode {
        EntropyMode::Raw => Ok(row_entropy(row)),
        EntropyMode::Preprocessed => {
            let mut p = preprocess_distribution(row)?;
            let z: f64 = p.iter().sum();
            if z <= 0.0 {
                return Ok(0.0);
            }
            p.iter_mut().for_each(|x| *x /= z);
            Ok(row_entropy(&p))
        }
    }
}

/// Mean entropy over the query `rows` of every head and layer.
pub fn attention_entropy(trace: &AttentionTrace, rows: Range<usize>, mode: EntropyMode) -> Result<f64> {
    if rows.is_empty() || rows.end > trace.len() || trace.layers() == 0 {
        return Err(invalid(format!("query rows {rows:?} invalid for a trace of {} positions", trace.len())));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for layer in 0..trace.layers() {
        for head in 0..trace.heads() {
            for i in rows.clone() {
                total += mode_entropy(trace.row(layer, head, i), mode)?;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Query rows averaged for a trace: its recorded end span, else the last row.
pub fn end_rows(trace: &AttentionTrace) -> Range<usize> {
    match &trace.meta {
        Some(m) => m.query_span.0..m.query_span.1,
        None => trace.len().saturating_sub(1)..trace.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub variant: String,
    pub len: usize,
    pub mode: EntropyMode,
    pub entropy: f64,
    pub samples: usize,
}

/// Mean over samples of [`attention_entropy`] on each trace's end rows.
pub fn entropy_report(variant: &str, traces: &[AttentionTrace], mode: EntropyMode) -> Result<EntropyReport> {
    let first = traces.first().ok_or_else(|| invalid("no traces"))?;
    let mut total = 0.0;
    for t in traces {
        if t.len() != first.len() {
            return Err(invalid("traces of one report must share a length"));
        }
        total += attention_entropy(t, end_rows(t), mode)?;
    }
    Ok(EntropyReport { variant: variant.to_string(), len: first.len(), mode, entropy: total / traces.len() as f64, samples: traces.len() })
}

/// Mean row over end rows, heads and layers (`layers` filters by index).
pub fn mean_distribution(trace: &AttentionTrace, rows: Range<usize>, layers: &[usize]) -> Result<Vec<f64>> {
    if rows.is_empty() || rows.end > trace.len() || layers.is_empty() {
        return Err(invalid("empty selection for the mean distribution"));
    }
    let mut out = vec![0.0; trace.len()];
    let mut count = 0;
    for &layer in layers {
        if layer >= trace.layers() {
            return Err(invalid(format!("layer {layer} outside trace of {} layers", trace.layers())));
        }
        for head in 0..trace.heads() {
            for i in rows.clone() {
                out.iter_mut().zip(trace.row(layer, head, i)).for_each(|(o, &w)| *o += w);
                count += 1;
            }
        }
    }
    out.iter_mut().for_each(|o| *o /= count as f64);
    Ok(out)
}

/// `RoPE 8k: 6.02`-style line.
pub fn entropy_row(name: &str, len: usize, value: f64) -> String {
    let l = if len % 1024 == 0 { format!("{}k", len / 1024) } else { len.to_string() };
    format!("{name} {l}: {value:.2}")
}
