//! Training sequence sources.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::niah::{TaskVocab, KEY_MARK, QUERY_MARK};

/// Deterministic generator of token sequences.
pub trait SequenceSource: Sync {
    /// `len` tokens drawn from the stream addressed by `seed`.
    fn sequence(&self, len: usize, seed: u64) -> Result<Vec<usize>>;

    /// Per-target loss weights for `seq` (target `i` is `seq[i + 1]`).
    /// `None` trains every position equally.
    fn loss_weights(&self, _seq: &[usize]) -> Option<Vec<f64>> {
        None
    }
}

/// Which next-token targets carry loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossScope {
    #[default]
    All,
    /// Only the value tokens completing a query.
    Answers,
}

/// Key/value recall documents built from the evaluation template: filler
/// with `KEY_MARK k v` needles, each later recalled by a `QUERY_MARK k v`
/// query. Needle/query order and gaps are random, so recall distances cover
/// the whole sequence. A share of the filler repeats earlier filler chunks,
/// which gives every sequence many copy targets besides the queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KvCurriculum {
    pub vocab: TaskVocab,
    /// Upper bound on needle/query pairs per token of sequence.
    pub pair_density: f64,
    /// Upper bound on pairs per document, whatever its length.
    pub max_pairs: usize,
    /// Probability that a filler chunk copies an earlier one.
    pub repeat_prob: f64,
    /// Filler chunks are `chunk_min..=chunk_max` tokens long.
    pub chunk_min: usize,
    pub chunk_max: usize,
    pub loss_scope: LossScope,
}

impl Default for KvCurriculum {
    fn default() -> Self {
        Self { vocab: TaskVocab::default(), pair_density: 1.0 / 16.0, max_pairs: 32, repeat_prob: 0.5, chunk_min: 4, chunk_max: 16, loss_scope: LossScope::All }
    }
}

impl KvCurriculum {
    pub fn validate(&self) -> Result<()> {
        self.vocab.validate()?;
        if !(self.pair_density >= 0.0 && self.pair_density.is_finite()) || !(0.0..=1.0).contains(&self.repeat_prob) {
            return Err(invalid("pair_density must be ≥ 0 and repeat_prob in [0, 1]"));
        }
        if self.chunk_min == 0 || self.chunk_min > self.chunk_max {
            return Err(invalid("filler chunks need 1 ≤ chunk_min ≤ chunk_max"));
        }
        Ok(())
    }

    fn filler_stream(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let range = self.vocab.filler();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let c = rng.gen_range(self.chunk_min..=self.chunk_max).min(n - out.len());
            let copy = out.len() >= c && rng.gen_bool(self.repeat_prob);
            if copy {
                let from = rng.gen_range(0..=out.len() - c);
                out.extend_from_within(from..from + c);
            } else {
                out.extend((0..c).map(|_| rng.gen_range(range.clone())));
            }
        }
        out
    }

    fn max_pairs(&self, len: usize) -> usize {
        let item = self.vocab.needle_len();
        let by_density = (len as f64 * self.pair_density).floor() as usize;
        by_density.min(self.max_pairs).min(len / (2 * item)).min(self.vocab.n_keys).min(self.vocab.n_values).max(1)
    }
}

impl SequenceSource for KvCurriculum {
    fn sequence(&self, len: usize, seed: u64) -> Result<Vec<usize>> {
        self.validate()?;
        let v = &self.vocab;
        let item = v.needle_len();
        if len < 2 * item {
            return Err(invalid(format!("length {len} cannot hold one needle and its query")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = rng.gen_range(1..=self.max_pairs(len));

        let mut keys: Vec<usize> = v.keys().collect();
        keys.shuffle(&mut rng);
        let mut values: Vec<usize> = v.values().collect();
        values.shuffle(&mut rng);
        let answers: Vec<Vec<usize>> = (0..pairs)
            .map(|p| if v.value_len == 1 { vec![values[p]] } else { v.random_value(&mut rng) })
            .collect();

        // Each pair takes two of the 2·pairs slots; the earlier one is the needle.
        let mut slots: Vec<usize> = (0..2 * pairs).collect();
        slots.shuffle(&mut rng);
        let mut slot_items = vec![(0usize, false); 2 * pairs];
        for p in 0..pairs {
            let (a, b) = (slots[2 * p].min(slots[2 * p + 1]), slots[2 * p].max(slots[2 * p + 1]));
            slot_items[a] = (p, false);
            slot_items[b] = (p, true);
        }

        // Split the remaining filler budget into 2·pairs + 1 gaps.
        let filler_total = len - 2 * pairs * item;
        let mut cuts: Vec<usize> = (0..2 * pairs).map(|_| rng.gen_range(0..=filler_total)).collect();
        cuts.sort_unstable();
        let filler = self.filler_stream(filler_total, &mut rng);
        let mut out = Vec::with_capacity(len);
        let mut prev = 0;
        for (slot, &(p, is_query)) in slot_items.iter().enumerate() {
            out.extend_from_slice(&filler[prev..cuts[slot]]);
            prev = cuts[slot];
            out.push(if is_query { QUERY_MARK } else { KEY_MARK });
            out.push(keys[p]);
            out.extend_from_slice(&answers[p]);
        }
        out.extend_from_slice(&filler[prev..]);
        Ok(out)
    }

    fn loss_weights(&self, seq: &[usize]) -> Option<Vec<f64>> {
        match self.loss_scope {
            LossScope::All => None,
            LossScope::Answers => {
                let mut w = vec![0.0; seq.len().saturating_sub(1)];
                for q in (0..seq.len()).filter(|&i| seq[i] == QUERY_MARK) {
                    for t in q + 1..(q + 1 + self.vocab.value_len).min(w.len()) {
                        w[t] = 1.0;
                    }
                }
                Some(w)
            }
        }
    }
}

/// A fixed pool of sequences, picked by `seed % pool size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedSequences {
    pub sequences: Vec<Vec<usize>>,
}

impl FixedSequences {
    /// `count` uniform random sequences of `len` tokens over `vocab_size`.
    pub fn random(count: usize, len: usize, vocab_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self { sequences: (0..count).map(|_| (0..len).map(|_| rng.gen_range(0..vocab_size)).collect()).collect() }
    }
}

impl SequenceSource for FixedSequences {
    fn sequence(&self, len: usize, seed: u64) -> Result<Vec<usize>> {
        if self.sequences.is_empty() {
            return Err(invalid("empty sequence pool"));
        }
        let s = &self.sequences[(seed % self.sequences.len() as u64) as usize];
        if s.len() < len {
            return Err(invalid(format!("pooled sequence of {} tokens, {len} requested", s.len())));
        }
        Ok(s[..len].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curriculum_documents_are_well_formed() {
        let c = KvCurriculum::default();
        for seed in 0..40 {
            for len in [12, 100, 257, 1025] {
                let s = c.sequence(len, seed).unwrap();
                assert_eq!(s.len(), len);
                assert!(s.iter().all(|&t| t < c.vocab.vocab_size));
                let needles: Vec<usize> = (0..len - 2).filter(|&i| s[i] == KEY_MARK).collect();
                let queries: Vec<usize> = (0..len - 2).filter(|&i| s[i] == QUERY_MARK).collect();
                assert_eq!(needles.len(), queries.len());
                assert!(!needles.is_empty());
                for &q in &queries {
                    let n = *needles.iter().find(|&&n| s[n + 1] == s[q + 1]).expect("query without needle");
                    assert!(n < q);
                    assert_eq!(s[n + 2], s[q + 2]);
                }
            }
        }
        assert_eq!(c.sequence(300, 5).unwrap(), c.sequence(300, 5).unwrap());
        let filler = c.vocab.filler();
        let plain = KvCurriculum { repeat_prob: 0.0, ..c };
        assert!(plain.sequence(300, 1).unwrap().iter().all(|t| filler.contains(t) || *t < c.vocab.filler().start));
        assert!(c.sequence(5, 0).is_err());
    }

    #[test]
    fn fixed_pool_cycles() {
        let f = FixedSequences::random(3, 10, 50, 1);
        assert_eq!(f.sequence(10, 4).unwrap(), f.sequences[1]);
        assert_eq!(f.sequence(4, 0).unwrap(), f.sequences[0][..4]);
        assert!(f.sequence(11, 0).is_err());
    }
}
