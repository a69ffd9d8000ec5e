use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    CausalFull,
    CausalSwa,
}

/// Causal attention mask, optionally restricted to a sliding window of `S`
/// keys (the query itself included): `allowed(i, j) ⇔ i − S < j ≤ i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnMask {
    kind: MaskKind,
    len: usize,
    window: Option<usize>,
}

pub fn build_mask(len: usize, kind: MaskKind, window: Option<usize>) -> Result<AttnMask> {
    if len == 0 {
        return Err(invalid("mask length must be at least 1"));
    }
    let window = match kind {
        MaskKind::CausalFull => None,
        MaskKind::CausalSwa => match window {
            Some(0) => return Err(invalid("sliding window must be at least 1")),
            Some(s) => Some(s),
            None => return Err(invalid("sliding-window mask requires a window size")),
        },
    };
    Ok(AttnMask { kind, len, window })
}

impl AttnMask {
    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn window(&self) -> Option<usize> {
        self.window
    }

    #[inline]
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        // `i - j` wraps to a huge offset for future keys, so one compare
        // covers both causality and the window.
        i.wrapping_sub(j) < self.window.unwrap_or(i + 1)
    }

    /// First key index visible from query row `i`; the visible keys are `start..=i`.
    #[inline]
    pub fn row_start(&self, i: usize) -> usize {
        match self.window {
            None => 0,
            Some(s) => (i + 1).saturating_sub(s),
        }
    }

    /// Row-major `[len, len]` materialization, evaluated pair by pair.
    pub fn to_dense(&self) -> Vec<bool> {
        let n = self.len;
        let mut out = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.allowed(i, j);
            }
        }
        out
    }

    /// Number of allowed pairs, counted row by row.
    pub fn allowed_pairs(&self) -> u64 {
        (0..self.len).map(|i| (i + 1 - self.row_start(i)) as u64).sum()
    }
}
