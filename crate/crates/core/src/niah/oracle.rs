//! Hand-built retrieval head used to validate the harness end to end.

use super::grid::Retriever;
use crate::error::{invalid, Result};
use crate::numeric::ops::{argmax, softmax_row};

/// Single attention head over one-hot features: the last position queries
/// with its own token, every position `j` offers the token at `j - 1` as key
/// and its own token as value. Scores are scaled by `sharpness`.
#[derive(Debug, Clone, Copy)]
pub struct CopyHead {
    pub vocab_size: usize,
    pub sharpness: f64,
}

impl CopyHead {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size, sharpness: 50.0 }
    }

    /// Output distribution over the vocabulary for the final position.
    pub fn next_distribution(&self, ctx: &[usize]) -> Result<Vec<f64>> {
        let Some(&q) = ctx.last() else {
            return Err(invalid("empty context"));
        };
        if let Some(&t) = ctx.iter().find(|&&t| t >= self.vocab_size) {
            return Err(invalid(format!("token {t} outside vocabulary")));
        }
        let mut scores: Vec<f64> =
            (0..ctx.len()).map(|j| if j > 0 && ctx[j - 1] == q { self.sharpness } else { 0.0 }).collect();
        softmax_row(&mut scores, None)?;
        let mut out = vec![0.0; self.vocab_size];
        for (&p, &t) in scores.iter().zip(ctx) {
            out[t] += p;
        }
        Ok(out)
    }
}

impl Retriever for CopyHead {
    fn greedy(&self, prompt: &[usize], n: usize) -> Result<Vec<usize>> {
        let mut ctx = prompt.to_vec();
        for _ in 0..n {
            let next = argmax(&self.next_distribution(&ctx)?);
            ctx.push(next);
        }
        Ok(ctx.split_off(prompt.len()))
    }
}
