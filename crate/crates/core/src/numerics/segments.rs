use std::ops::Range;

use super::NumericsError;

/// Contiguous row groups of a matrix, each mapped to one output row.
///
/// Segment `s` covers rows `offsets[s]..offsets[s + 1]` and writes to output
/// row `targets[s]` of an `n_out`-row result. Output rows that no segment
/// targets stay zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Segments {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    n_out: usize,
}

impl Segments {
    pub fn new(offsets: Vec<usize>, targets: Vec<usize>, n_out: usize) -> Result<Self, NumericsError> {
        if offsets.len() != targets.len() + 1 || offsets.first() != Some(&0) {
            return Err(NumericsError::InvalidSegments(format!(
                "{} offsets for {} targets",
                offsets.len(),
                targets.len()
            )));
        }
        if offsets.windows(2).any(|w| w[1] == w[0]) {
            return Err(NumericsError::EmptySegment { op: "segments" });
        }
        if offsets.windows(2).any(|w| w[1] < w[0]) {
            return Err(NumericsError::InvalidSegments("offsets must increase".into()));
        }
        let mut seen = vec![false; n_out];
        for &t in &targets {
            if t >= n_out {
                return Err(NumericsError::IndexOutOfRange { op: "segments", index: t, bound: n_out });
            }
            if std::mem::replace(&mut seen[t], true) {
                return Err(NumericsError::InvalidSegments(format!("target {t} repeated")));
            }
        }
        Ok(Self { offsets, targets, n_out })
    }

    /// Groups runs of equal consecutive keys; `keys` must be sorted.
    pub fn from_sorted_keys(keys: &[usize], n_out: usize) -> Result<Self, NumericsError> {
        let mut offsets = vec![0];
        let mut targets = Vec::new();
        for (i, &k) in keys.iter().enumerate() {
            if i == 0 || keys[i - 1] != k {
                if i > 0 {
                    if keys[i - 1] > k {
                        return Err(NumericsError::InvalidSegments("keys must be sorted".into()));
                    }
                    offsets.push(i);
                }
                targets.push(k);
            }
        }
        if !keys.is_empty() {
            offsets.push(keys.len());
        }
        Self::new(offsets, targets, n_out)
    }

    /// One segment spanning `rows` rows, reduced to a single output row.
    pub fn single(rows: usize) -> Result<Self, NumericsError> {
        if rows == 0 {
            return Err(NumericsError::EmptySegment { op: "segments" });
        }
        Self::new(vec![0, rows], vec![0], 1)
    }

    pub fn total_rows(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn n_segments(&self) -> usize {
        self.targets.len()
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, Range<usize>)> + '_ {
        self.targets.iter().enumerate().map(move |(s, &t)| (t, self.offsets[s]..self.offsets[s + 1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_sorted_keys() {
        let s = Segments::from_sorted_keys(&[0, 0, 2, 2, 2, 3], 5).unwrap();
        let got: Vec<_> = s.iter().collect();
        assert_eq!(got, vec![(0, 0..2), (2, 2..5), (3, 5..6)]);
        assert_eq!(s.total_rows(), 6);
    }

    #[test]
    fn rejects_empty_and_unsorted() {
        assert!(matches!(Segments::new(vec![0, 0], vec![0], 1), Err(NumericsError::EmptySegment { .. })));
        assert!(Segments::from_sorted_keys(&[1, 0], 2).is_err());
        assert!(Segments::single(0).is_err());
        assert!(Segments::from_sorted_keys(&[], 3).unwrap().n_segments() == 0);
    }
}
