use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BatchKind {
    Short,
    Long,
}

/// Kind of batch `step` (0-based) under a `(short, long)` ratio: each cycle
/// holds `short` short batches followed by `long` long ones.
pub fn batch_kind(ratio: (usize, usize), step: usize) -> Result<BatchKind> {
    let cycle = ratio.0 + ratio.1;
    if cycle == 0 {
        return Err(invalid("interleave ratio has zero total"));
    }
    Ok(if step % cycle < ratio.0 { BatchKind::Short } else { BatchKind::Long })
}

/// Draws `n` batches from the two streams following [`batch_kind`].
pub fn interleave_batches<B>(
    mut short: impl Iterator<Item = B>,
    mut long: impl Iterator<Item = B>,
    ratio: (usize, usize),
    n: usize,
) -> Result<Vec<B>> {
    (0..n)
        .map(|step| {
            let (stream, name): (&mut dyn Iterator<Item = B>, _) = match batch_kind(ratio, step)? {
                BatchKind::Short => (&mut short, "short"),
                BatchKind::Long => (&mut long, "long"),
            };
            stream.next().ok_or_else(|| invalid(format!("{name} stream exhausted at batch {step}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use BatchKind::*;

    fn kinds(ratio: (usize, usize), n: usize) -> Vec<BatchKind> {
        (0..n).map(|s| batch_kind(ratio, s).unwrap()).collect()
    }

    #[test]
    fn ratio_patterns() {
        assert_eq!(kinds((3, 1), 8), [Short, Short, Short, Long, Short, Short, Short, Long]);
        assert_eq!(kinds((1, 0), 5), [Short; 5]);
        assert_eq!(kinds((1, 1), 4), [Short, Long, Short, Long]);
        assert!(batch_kind((0, 0), 0).is_err());
    }

    #[test]
    fn draws_from_streams() {
        let b = interleave_batches(0..100, 1000..1100, (3, 1), 8).unwrap();
        assert_eq!(b, [0, 1, 2, 1000, 3, 4, 5, 1001]);
        assert_eq!(interleave_batches(0..3, std::iter::empty(), (1, 0), 3).unwrap(), [0, 1, 2]);
        assert!(interleave_batches(0..1, 0..0, (1, 1), 2).is_err());
        assert!(interleave_batches(0..1, 0..1, (0, 0), 1).is_err());
    }
}
