//! Token-level key/value needle template.
//!
//! The vocabulary is split into special markers, key tokens, value tokens and
//! filler tokens, in that order, with no overlap. A needle reads
//! `KEY_MARK k v₁..vₘ`; the query closing the prompt reads `QUERY_MARK k` and
//! the expected continuation is `v₁..vₘ`.

use std::ops::Range;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const PAD: usize = 0;
pub const KEY_MARK: usize = 1;
pub const QUERY_MARK: usize = 2;
/// Ids below this are reserved markers.
pub const N_SPECIAL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskVocab {
    pub vocab_size: usize,
    pub n_keys: usize,
    pub n_values: usize,
    /// Tokens per answer.
    pub value_len: usize,
}

impl Default for TaskVocab {
    fn default() -> Self {
        Self { vocab_size: 512, n_keys: 128, n_values: 128, value_len: 1 }
    }
}

impl TaskVocab {
    pub fn validate(&self) -> Result<()> {
        if self.n_keys == 0 || self.n_values == 0 || self.value_len == 0 {
            return Err(invalid("n_keys, n_values and value_len must be ≥ 1"));
        }
        if N_SPECIAL + self.n_keys + self.n_values >= self.vocab_size {
            return Err(invalid(format!(
                "vocab_size {} leaves no filler tokens after {} markers, {} keys and {} values",
                self.vocab_size, N_SPECIAL, self.n_keys, self.n_values
            )));
        }
        Ok(())
    }

    pub fn keys(&self) -> Range<usize> {
        N_SPECIAL..N_SPECIAL + self.n_keys
    }

    pub fn values(&self) -> Range<usize> {
        let start = N_SPECIAL + self.n_keys;
        start..start + self.n_values
    }

    pub fn filler(&self) -> Range<usize> {
        N_SPECIAL + self.n_keys + self.n_values..self.vocab_size
    }

    pub fn needle_len(&self) -> usize {
        2 + self.value_len
    }

    pub fn query_len(&self) -> usize {
        2
    }

    pub(crate) fn random_value(&self, rng: &mut impl Rng) -> Vec<usize> {
        (0..self.value_len).map(|_| rng.gen_range(self.values())).collect()
    }
}

/// One evaluation prompt. `tokens` already ends with the query; `answer` is
/// the expected continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiahSample {
    pub tokens: Vec<usize>,
    pub needle_span: (usize, usize),
    pub query_span: (usize, usize),
    pub answer: Vec<usize>,
    pub key: usize,
    pub seed: u64,
    pub depth: f64,
}

impl NiahSample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// First needle index for a prompt of `len` tokens at `depth`.
pub fn needle_start(len: usize, depth: f64, vocab: &TaskVocab) -> usize {
    let room = len.saturating_sub(vocab.needle_len() + vocab.query_len());
    (depth * room as f64).round() as usize
}

pub fn make_sample(len: usize, depth: f64, seed: u64, vocab: &TaskVocab) -> Result<NiahSample> {
    vocab.validate()?;
    if !(0.0..=1.0).contains(&depth) {
        return Err(invalid(format!("depth {depth} outside [0, 1]")));
    }
    let (nl, ql) = (vocab.needle_len(), vocab.query_len());
    if len < nl + ql {
        return Err(invalid(format!("length {len} cannot hold a {nl}-token needle and a {ql}-token query")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = rng.gen_range(vocab.keys());
    let answer = vocab.random_value(&mut rng);
    let filler = vocab.filler();
    let mut tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(filler.clone())).collect();

    let start = needle_start(len, depth, vocab);
    tokens[start] = KEY_MARK;
    tokens[start + 1] = key;
    tokens[start + 2..start + nl].copy_from_slice(&answer);
    let q0 = len - ql;
    tokens[q0] = QUERY_MARK;
    tokens[q0 + 1] = key;
    Ok(NiahSample { tokens, needle_span: (start, start + nl), query_span: (q0, len), answer, key, seed, depth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_zero_starts_at_zero() {
        let v = TaskVocab::default();
        let s = make_sample(64, 0.0, 3, &v).unwrap();
        assert_eq!(s.needle_span, (0, 3));
        assert_eq!(s.tokens[0], KEY_MARK);
    }

    #[test]
    fn half_depth_formula() {
        let v = TaskVocab::default();
        let s = make_sample(1024, 0.5, 3, &v).unwrap();
        let expected = (0.5 * (1024 - v.needle_len() - v.query_len()) as f64).round() as usize;
        assert_eq!(s.needle_span.0, expected);
        assert_eq!(s.query_span, (1022, 1024));
    }

    #[test]
    fn full_depth_touches_the_query() {
        let v = TaskVocab::default();
        let s = make_sample(100, 1.0, 3, &v).unwrap();
        assert_eq!(s.needle_span.1, s.query_span.0);
    }

    #[test]
    fn samples_are_deterministic() {
        let v = TaskVocab { value_len: 3, ..Default::default() };
        assert_eq!(make_sample(300, 0.25, 11, &v).unwrap(), make_sample(300, 0.25, 11, &v).unwrap());
        assert_ne!(make_sample(300, 0.25, 11, &v).unwrap().tokens, make_sample(300, 0.25, 12, &v).unwrap().tokens);
    }

    #[test]
    fn answer_occurs_once() {
        let v = TaskVocab { value_len: 2, ..Default::default() };
        for seed in 0..50 {
            let s = make_sample(200, 0.7, seed, &v).unwrap();
            let hits = s.tokens.windows(2).filter(|w| *w == s.answer.as_slice()).count();
            assert_eq!(hits, 1);
            assert!(s.tokens.iter().filter(|&&t| t == s.key).count() == 2);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let v = TaskVocab::default();
        assert!(make_sample(4, 0.5, 0, &v).is_err());
        assert!(make_sample(64, 1.5, 0, &v).is_err());
        assert!(make_sample(64, f64::NAN, 0, &v).is_err());
        let tight = TaskVocab { vocab_size: 260, ..Default::default() };
        assert!(make_sample(64, 0.5, 0, &tight).is_err());
    }
}
