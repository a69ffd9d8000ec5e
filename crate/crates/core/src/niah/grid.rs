//! Evaluation grids over (length, depth, seed) and their reports.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::task::{make_sample, TaskVocab};
use crate::error::{invalid, Result};
use crate::model::Model;
use crate::numeric::ops::argmax;
use crate::numeric::Real;
use crate::par::{self, Parallelism};
use crate::seed::derive_seed;

/// Anything that can continue a prompt greedily.
pub trait Retriever: Sync {
    fn greedy(&self, prompt: &[usize], n: usize) -> Result<Vec<usize>>;

    /// Longest prompt accepted, if bounded.
    fn max_len(&self) -> Option<usize> {
        None
    }
}

impl<T: Real> Retriever for Model<T> {
    fn greedy(&self, prompt: &[usize], n: usize) -> Result<Vec<usize>> {
        let mut ctx = prompt.to_vec();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let next = argmax(&self.last_logits(&ctx)?);
            out.push(next);
            ctx.push(next);
        }
        Ok(out)
    }

    fn max_len(&self) -> Option<usize> {
        Some(self.config().max_seq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedlesGrid {
    pub lengths: Vec<usize>,
    pub depths: Vec<f64>,
    pub seeds_per_cell: usize,
    /// Root of the per-sample seeds.
    pub seed: u64,
}

impl Default for NeedlesGrid {
    fn default() -> Self {
        Self { lengths: vec![256, 512, 1024, 2048], depths: vec![0.0, 0.25, 0.5, 0.75, 1.0], seeds_per_cell: 16, seed: 0 }
    }
}

/// One (length, depth, seed) evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub len: usize,
    pub depth: f64,
    pub seed_index: usize,
    pub sample_seed: u64,
}

impl NeedlesGrid {
    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() || self.depths.is_empty() || self.seeds_per_cell == 0 {
            return Err(invalid("grid needs at least one length, one depth and one seed per cell"));
        }
        if let Some(d) = self.depths.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return Err(invalid(format!("depth {d} outside [0, 1]")));
        }
        Ok(())
    }

    /// Cells in length-major, then depth, then seed order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::with_capacity(self.lengths.len() * self.depths.len() * self.seeds_per_cell);
        for &len in &self.lengths {
            for (di, &depth) in self.depths.iter().enumerate() {
                for seed_index in 0..self.seeds_per_cell {
                    let sample_seed = derive_seed(self.seed, &[len as u64, di as u64, seed_index as u64]);
                    out.push(CellKey { len, depth, seed_index, sample_seed });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: CellKey,
    pub pass: bool,
    pub predicted: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub grid: NeedlesGrid,
    pub cells: Vec<CellResult>,
}

fn score_of<'a>(cells: impl Iterator<Item = &'a CellResult>) -> f64 {
    let (mut n, mut hits) = (0usize, 0usize);
    for c in cells {
        n += 1;
        hits += c.pass as usize;
    }
    if n == 0 {
        0.0
    } else {
        10.0 * hits as f64 / n as f64
    }
}

impl GridResult {
    /// 10 × fraction of passing cells.
    pub fn score(&self) -> f64 {
        score_of(self.cells.iter())
    }

    pub fn score_where(&self, f: impl Fn(&CellKey) -> bool) -> f64 {
        score_of(self.cells.iter().filter(|c| f(&c.key)))
    }

    pub fn score_at_length(&self, len: usize) -> f64 {
        self.score_where(|k| k.len == len)
    }

    pub fn per_length(&self) -> Vec<(usize, f64)> {
        self.grid.lengths.iter().map(|&l| (l, self.score_at_length(l))).collect()
    }

    pub fn per_depth(&self) -> Vec<(f64, f64)> {
        self.grid.depths.iter().map(|&d| (d, self.score_where(|k| k.depth == d))).collect()
    }

    /// `[depth][length]` score matrix.
    pub fn heatmap(&self) -> Vec<Vec<f64>> {
        self.grid
            .depths
            .iter()
            .map(|&d| self.grid.lengths.iter().map(|&l| self.score_where(|k| k.depth == d && k.len == l)).collect())
            .collect()
    }
}

/// Builds every sample of the grid and checks the greedy continuation.
pub fn score_grid<R: Retriever>(model: &R, grid: &NeedlesGrid, vocab: &TaskVocab, policy: Parallelism) -> Result<GridResult> {
    grid.validate()?;
    vocab.validate()?;
    let longest = grid.lengths.iter().max().copied().unwrap_or(0);
    if let Some(max) = model.max_len() {
        if longest > max {
            return Err(invalid(format!("grid length {longest} exceeds the model's max_seq {max}")));
        }
    }
    let keys = grid.cells();
    let cells = par::map_slice(policy, &keys, |&key| -> Result<CellResult> {
        let sample = make_sample(key.len, key.depth, key.sample_seed, vocab)?;
        let predicted = model.greedy(&sample.tokens, sample.answer.len())?;
        Ok(CellResult { key, pass: contains(&predicted, &sample.answer), predicted })
    });
    Ok(GridResult { grid: grid.clone(), cells: cells.into_iter().collect::<Result<_>>()? })
}

fn contains(haystack: &[usize], needle: &[usize]) -> bool {
    needle.is_empty() || haystack.windows(needle.len()).any(|w| w == needle)
}

pub fn write_grid_csv<W: Write>(result: &GridResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["length", "depth", "seed", "pass"])?;
    for c in &result.cells {
        w.write_record([c.key.len.to_string(), c.key.depth.to_string(), c.key.seed_index.to_string(), (c.pass as u8).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Depth rows × length columns.
pub fn write_heatmap_csv<W: Write>(result: &GridResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["depth".to_string()];
    header.extend(result.grid.lengths.iter().map(|l| l.to_string()));
    w.write_record(&header)?;
    for (d, row) in result.grid.depths.iter().zip(result.heatmap()) {
        let mut rec = vec![d.to_string()];
        rec.extend(row.iter().map(|s| format!("{s:.4}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub score: f64,
    pub per_length: BTreeMap<String, f64>,
    pub per_depth: BTreeMap<String, f64>,
    pub cells: usize,
    pub template: String,
    pub scoring: String,
}

impl GridSummary {
    pub fn new(result: &GridResult, vocab: &TaskVocab) -> Self {
        Self {
            score: result.score(),
            per_length: result.per_length().into_iter().map(|(l, s)| (format!("{l:06}"), s)).collect(),
            per_depth: result.per_depth().into_iter().map(|(d, s)| (format!("{d:.3}"), s)).collect(),
            cells: result.cells.len(),
            template: format!(
                "needle KEY_MARK k v[{}], query QUERY_MARK k at the end; keys {:?}, values {:?}, filler {:?}",
                vocab.value_len,
                vocab.keys(),
                vocab.values(),
                vocab.filler()
            ),
            scoring: "greedy continuation must contain the answer; score = 10 x pass rate".into(),
        }
    }
}

/// One line in the `Model Score` layout, e.g. `RNoPE-10k-swa 9.56`.
pub fn score_row(name: &str, score: f64) -> String {
    format!("{name} {score:.2}")
}
