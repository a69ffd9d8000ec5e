//! Captured attention weights and their on-disk container.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "HATTNTRC"
//! version  u32      1
//! hdr_len  u64      byte length of the JSON header
//! header   JSON     {"layers", "heads", "len", "kinds": [..], "meta": {..} | null}
//! weights  f64 × layers·heads·len·len, layer-major then head, row-major [len, len]
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HATTNTRC";
const VERSION: u32 = 1;

/// Attention flavour of one layer, as recorded in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    NopeFull,
    NopeSwa,
    RopeFull,
    RopeSwa,
    QkNorm,
}

impl LayerKind {
    /// Positional family used for the NoPE/RoPE split of mass reports.
    pub fn family(self) -> &'static str {
        match self {
            LayerKind::NopeFull | LayerKind::NopeSwa => "nope",
            LayerKind::RopeFull | LayerKind::RopeSwa | LayerKind::QkNorm => "rope",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LayerKind::NopeFull => "nope-full",
            LayerKind::NopeSwa => "nope-swa",
            LayerKind::RopeFull => "rope-full",
            LayerKind::RopeSwa => "rope-swa",
            LayerKind::QkNorm => "qk-norm",
        }
    }
}

/// Sample bookkeeping carried alongside a trace so analysis can recover spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub variant: String,
    pub needle_span: (usize, usize),
    pub query_span: (usize, usize),
    pub depth: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    layers: usize,
    heads: usize,
    len: usize,
    kinds: Vec<LayerKind>,
    meta: Option<TraceMeta>,
}

/// Post-softmax weights for every (layer, head), zero on masked pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    len: usize,
    heads: usize,
    kinds: Vec<LayerKind>,
    weights: Vec<Vec<f64>>,
    pub meta: Option<TraceMeta>,
}

impl AttentionTrace {
    pub fn new(len: usize, heads: usize) -> Self {
        Self { len, heads, kinds: Vec::new(), weights: Vec::new(), meta: None }
    }

    /// Appends one layer's `[heads, len, len]` slab.
    pub fn push_layer(&mut self, kind: LayerKind, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.heads * self.len * self.len {
            return Err(crate::error::shape(format!(
                "trace slab has {} values, expected {}",
                weights.len(),
                self.heads * self.len * self.len
            )));
        }
        self.kinds.push(kind);
        self.weights.push(weights);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn layers(&self) -> usize {
        self.kinds.len()
    }

    pub fn kind(&self, layer: usize) -> LayerKind {
        self.kinds[layer]
    }

    pub fn kinds(&self) -> &[LayerKind] {
        &self.kinds
    }

    pub fn slab(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn row(&self, layer: usize, head: usize, query: usize) -> &[f64] {
        let l = self.len;
        let base = (head * l + query) * l;
        &self.weights[layer][base..base + l]
    }

    pub fn weight(&self, layer: usize, head: usize, query: usize, key: usize) -> f64 {
        self.row(layer, head, query)[key]
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for layer in 0..self.layers() {
            for head in 0..self.heads {
                for i in 0..self.len {
                    let s: f64 = self.row(layer, head, i).iter().sum();
                    worst = worst.max((s - 1.0).abs());
                }
            }
        }
        worst
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = Header {
            layers: self.layers(),
            heads: self.heads,
            len: self.len,
            kinds: self.kinds.clone(),
            meta: self.meta.clone(),
        };
        let hdr = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(hdr.len() as u64).to_le_bytes())?;
        w.write_all(&hdr)?;
        let mut buf = Vec::with_capacity(self.heads * self.len * self.len * 8);
        for slab in &self.weights {
            buf.clear();
            for v in slab {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("in-memory write");
        out
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an attention trace container".into()));
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b)?;
        let version = u32::from_le_bytes(u32b);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported trace version {version}")));
        }
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b)?;
        let mut hdr = vec![0u8; u64::from_le_bytes(u64b) as usize];
        r.read_exact(&mut hdr)?;
        let header: Header = serde_json::from_slice(&hdr)?;
        if header.kinds.len() != header.layers {
            return Err(Error::Format("kinds list does not match layer count".into()));
        }
        let per = header.heads * header.len * header.len;
        let mut trace = AttentionTrace::new(header.len, header.heads);
        trace.meta = header.meta;
        let mut raw = vec![0u8; per * 8];
        for kind in header.kinds {
            r.read_exact(&mut raw)?;
            let slab = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            trace.push_layer(kind, slab)?;
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip_keeps_spans() {
        let mut t = AttentionTrace::new(2, 1);
        t.push_layer(LayerKind::RopeSwa, vec![1.0, 0.0, 0.25, 0.75]).unwrap();
        t.push_layer(LayerKind::NopeFull, vec![1.0, 0.0, 0.5, 0.5]).unwrap();
        t.meta = Some(TraceMeta {
            variant: "rnope-swa".into(),
            needle_span: (0, 1),
            query_span: (1, 2),
            depth: 0.5,
            seed: 9,
        });
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..8], b"HATTNTRC");
        let back = AttentionTrace::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.weight(0, 0, 1, 1), 0.75);
        assert!(back.max_row_error() < 1e-15);
    }

    #[test]
    fn rejects_garbage() {
        assert!(AttentionTrace::read_from(&b"not a trace at all"[..]).is_err());
        let mut t = AttentionTrace::new(2, 1);
        assert!(t.push_layer(LayerKind::RopeFull, vec![1.0]).is_err());
    }
}
