use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::spans::{Segment, SegmentSpans};
use crate::attention::{AttentionTrace, LayerKind};
use crate::error::{invalid, Result};

/// Segment masses of one (layer, head), in [`Segment::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadMass {
    pub layer: usize,
    pub head: usize,
    pub kind: LayerKind,
    pub mass: [f64; 4],
}

impl HeadMass {
    pub fn get(&self, s: Segment) -> f64 {
        self.mass[s as usize]
    }
}

/// Per (layer, head): weight summed within each key segment, averaged over
/// the query rows of the end span.
pub fn attention_mass(trace: &AttentionTrace, spans: &SegmentSpans) -> Result<Vec<HeadMass>> {
    if spans.len != trace.len() {
        return Err(invalid(format!("spans cover {} tokens, trace has {}", spans.len, trace.len())));
    }
    let labels: Vec<Segment> = (0..spans.len).map(|j| spans.segment_of(j)).collect();
    let rows = spans.end.0..spans.end.1;
    let n_rows = rows.len() as f64;
    let mut out = Vec::with_capacity(trace.layers() * trace.heads());
    for layer in 0..trace.layers() {
        for head in 0..trace.heads() {
            let mut mass = [0.0; 4];
            for i in rows.clone() {
                for (&w, &s) in trace.row(layer, head, i).iter().zip(&labels) {
                    mass[s as usize] += w;
                }
            }
            mass.iter_mut().for_each(|m| *m /= n_rows);
            out.push(HeadMass { layer, head, kind: trace.kind(layer), mass });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    /// One group per [`LayerKind`].
    Kind,
    /// `nope` vs. `rope`.
    Family,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassRow {
    pub group: String,
    pub mass: [f64; 4],
    /// Number of (layer, head, sample) entries averaged.
    pub count: usize,
}

impl MassRow {
    pub fn get(&self, s: Segment) -> f64 {
        self.mass[s as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassReport {
    pub variant: String,
    pub len: usize,
    pub grouping: Grouping,
    pub rows: Vec<MassRow>,
}

impl MassReport {
    pub fn row(&self, group: &str) -> Option<&MassRow> {
        self.rows.iter().find(|r| r.group == group)
    }
}

fn group_name(kind: LayerKind, grouping: Grouping) -> &'static str {
    match grouping {
        Grouping::Kind => kind.label(),
        Grouping::Family => kind.family(),
    }
}

/// Unweighted mean of every (layer, head, sample) entry within each group.
/// `expected` lists groups that should appear; a missing one is logged and
/// omitted.
pub fn aggregate_mass(
    samples: &[Vec<HeadMass>],
    grouping: Grouping,
    variant: &str,
    len: usize,
    expected: &[&str],
) -> MassReport {
    let mut acc: BTreeMap<&'static str, ([f64; 4], usize)> = BTreeMap::new();
    for hm in samples.iter().flatten() {
        let e = acc.entry(group_name(hm.kind, grouping)).or_insert(([0.0; 4], 0));
        for (a, m) in e.0.iter_mut().zip(hm.mass) {
            *a += m;
        }
        e.1 += 1;
    }
    for g in expected {
        if !acc.contains_key(g) {
            log::warn!("no attention entries for group `{g}`; omitted from the {variant} report");
        }
    }
    let rows = acc
        .into_iter()
        .map(|(group, (sum, count))| MassRow { group: group.to_string(), mass: sum.map(|s| s / count as f64), count })
        .collect();
    MassReport { variant: variant.to_string(), len, grouping, rows }
}
