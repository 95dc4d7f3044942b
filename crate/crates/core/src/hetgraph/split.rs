use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HetGraph, HetGraphError, Result, Triplet};

/// Independent test positives plus a k-fold partition of the remainder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub seed: u64,
    pub test: Vec<Triplet>,
    pub folds: Vec<Vec<Triplet>>,
}

/// Positives of one CV round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<Triplet>,
    pub validation: Vec<Triplet>,
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    test: Vec<String>,
    folds: Vec<Vec<String>>,
    seed: u64,
}

impl SplitPlan {
    pub fn cv_positives(&self) -> impl Iterator<Item = &Triplet> {
        self.folds.iter().flatten()
    }

    /// Round `k`: fold `k` validates, the other folds train (in fold order).
    pub fn fold(&self, k: usize) -> FoldSplit {
        let train = self.folds.iter().enumerate().filter(|&(i, _)| i != k).flat_map(|(_, f)| f.iter().copied()).collect();
        FoldSplit { train, validation: self.folds[k].clone() }
    }

    pub fn to_json(&self, g: &HetGraph) -> String {
        let ids = |v: &[Triplet]| v.iter().map(|t| g.triplet_id(t)).collect::<Vec<_>>();
        let file = SplitFile { test: ids(&self.test), folds: self.folds.iter().map(|f| ids(f)).collect(), seed: self.seed };
        serde_json::to_string_pretty(&file).expect("plain data")
    }

    pub fn from_json(g: &HetGraph, s: &str) -> Result<Self> {
        let file: SplitFile = serde_json::from_str(s)?;
        let parse = |v: &[String]| v.iter().map(|id| g.parse_triplet_id(id)).collect::<Result<Vec<_>>>();
        Ok(Self {
            seed: file.seed,
            test: parse(&file.test)?,
            folds: file.folds.iter().map(|f| parse(f)).collect::<Result<_>>()?,
        })
    }

    /// Hex SHA-256 of the index-level plan, used to show that runs share a split.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        let mut feed = |v: &[Triplet]| {
            h.update((v.len() as u64).to_le_bytes());
            for t in v {
                for x in [t.gene, t.microbe, t.disease] {
                    h.update((x as u64).to_le_bytes());
                }
            }
        };
        feed(&self.test);
        for f in &self.folds {
            feed(f);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Shuffles `positives` with `seed`, reserves `round(test_fraction · n)` for
/// test and deals the rest into `folds` contiguous near-equal parts (earlier
/// folds take the remainder).
pub fn make_split(positives: &[Triplet], test_fraction: f64, folds: usize, seed: u64) -> Result<SplitPlan> {
    if !(0.0..1.0).contains(&test_fraction) || folds == 0 {
        return Err(HetGraphError::InvalidConfig(format!("test_fraction {test_fraction}, folds {folds}")));
    }
    let n = positives.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    if n < folds || n - n_test < folds {
        return Err(HetGraphError::TooFewPositives { needed: folds + n_test, got: n });
    }
    let mut shuffled = positives.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled[..n_test].to_vec();
    let rest = &shuffled[n_test..];
    let (base, extra) = (rest.len() / folds, rest.len() % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for k in 0..folds {
        let len = base + usize::from(k < extra);
        out.push(rest[start..start + len].to_vec());
        start += len;
    }
    Ok(SplitPlan { seed, test, folds: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn positives(n: usize) -> Vec<Triplet> {
        (0..n).map(|i| Triplet::new(i, i % 7, i % 5)).collect()
    }

    #[test]
    fn hundred_positives() {
        let plan = make_split(&positives(100), 0.1, 5, 42).unwrap();
        assert_eq!(plan.test.len(), 10);
        assert_eq!(plan.folds.iter().map(Vec::len).collect::<Vec<_>>(), vec![18; 5]);
        let f = plan.fold(2);
        assert_eq!(f.train.len(), 72);
        assert_eq!(f.validation, plan.folds[2]);
    }

    #[test]
    fn deterministic_partition() {
        let pos = positives(57);
        let a = make_split(&pos, 0.1, 5, 7).unwrap();
        assert_eq!(a, make_split(&pos, 0.1, 5, 7).unwrap());
        assert_ne!(a, make_split(&pos, 0.1, 5, 8).unwrap());
        let mut all: Vec<_> = a.test.iter().chain(a.cv_positives()).copied().collect();
        assert_eq!(all.len(), 57);
        all.sort();
        assert_eq!(all, pos);
        let sizes: HashSet<_> = a.folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn too_few_positives_rejected() {
        assert!(matches!(make_split(&positives(4), 0.1, 5, 1), Err(HetGraphError::TooFewPositives { .. })));
    }
}
