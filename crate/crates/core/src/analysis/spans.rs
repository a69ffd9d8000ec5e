use serde::{Deserialize, Serialize};

use crate::attention::TraceMeta;
use crate::error::{invalid, Result};

/// Leading tokens counted as the `Begin` segment.
pub const BEGIN_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Segment {
    Begin,
    Needle,
    Context,
    End,
}

impl Segment {
    pub const ALL: [Segment; 4] = [Segment::Begin, Segment::Needle, Segment::Context, Segment::End];

    pub fn name(self) -> &'static str {
        match self {
            Segment::Begin => "begin",
            Segment::Needle => "needle",
            Segment::Context => "context",
            Segment::End => "end",
        }
    }
}

/// Partition of `[0, len)` into begin `[0, 10)`, the needle, the end span and
/// everything else (context).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpans {
    pub len: usize,
    pub needle: (usize, usize),
    pub end: (usize, usize),
}

impl SegmentSpans {
    pub fn new(len: usize, needle: (usize, usize), end: (usize, usize)) -> Result<Self> {
        if end.1 != len || end.0 >= end.1 {
            return Err(invalid(format!("end span {end:?} must be a non-empty suffix of [0, {len})")));
        }
        if needle.0 >= needle.1 {
            return Err(invalid(format!("empty needle span {needle:?}")));
        }
        if needle.0 < BEGIN_LEN {
            return Err(invalid(format!("needle span {needle:?} overlaps the first {BEGIN_LEN} tokens")));
        }
        if needle.1 > end.0 {
            return Err(invalid(format!("needle span {needle:?} overlaps the end span {end:?}")));
        }
        Ok(Self { len, needle, end })
    }

    pub fn from_meta(len: usize, meta: &TraceMeta) -> Result<Self> {
        Self::new(len, meta.needle_span, meta.query_span)
    }

    pub fn segment_of(&self, j: usize) -> Segment {
        if j < BEGIN_LEN {
            Segment::Begin
        } else if (self.needle.0..self.needle.1).contains(&j) {
            Segment::Needle
        } else if j >= self.end.0 {
            Segment::End
        } else {
            Segment::Context
        }
    }

    /// Segment sizes in [`Segment::ALL`] order.
    pub fn sizes(&self) -> [usize; 4] {
        let mut out = [0; 4];
        for j in 0..self.len {
            out[self.segment_of(j) as usize] += 1;
        }
        out
    }
}
