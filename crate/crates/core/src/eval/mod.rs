//! Ranking metrics with a fixed tie rule, degree-stratified Hit@1,
//! silhouette score and triplet-embedding export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hetgraph::{avg_node_degree, HetGraph, Triplet};
use crate::numerics::Matrix;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no cases to evaluate")]
    Empty,
    #[error("thresholds must be strictly increasing: {0:?}")]
    Thresholds(Vec<f64>),
    #[error("silhouette needs both labels present, got {pos} positives and {neg} negatives")]
    OneClass { pos: usize, neg: usize },
    #[error("{0} labels for {1} embedding rows")]
    LengthMismatch(usize, usize),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {detail}")]
    Malformed { path: PathBuf, line: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// One positive ranked against its negatives.
///
/// Candidates carry ids from a seeded permutation; among equal scores the
/// lower id ranks first. `rank = 1 + #(s > s⁺) + #(s = s⁺ and id < id⁺)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCase {
    pub positive: Triplet,
    /// Positive score first, then negatives.
    pub scores: Vec<f64>,
    pub candidate_ids: Vec<usize>,
    pub rank: usize,
}

impl RankedCase {
    pub fn new(positive: Triplet, scores: Vec<f64>, candidate_ids: Vec<usize>) -> Self {
        debug_assert_eq!(scores.len(), candidate_ids.len());
        let (s, id) = (scores[0], candidate_ids[0]);
        let ahead = scores[1..].iter().zip(&candidate_ids[1..]).filter(|&(&x, &j)| x > s || (x == s && j < id)).count();
        Self { positive, scores, candidate_ids, rank: 1 + ahead }
    }

    /// Draws the candidate id permutation from `rng`.
    pub fn with_rng<R: Rng + ?Sized>(positive: Triplet, scores: Vec<f64>, rng: &mut R) -> Self {
        let mut ids: Vec<usize> = (0..scores.len()).collect();
        ids.shuffle(rng);
        Self::new(positive, scores, ids)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub hit1: f64,
    pub hit3: f64,
    pub hit5: f64,
    pub ndcg1: f64,
    pub ndcg3: f64,
    pub ndcg5: f64,
    pub mrr: f64,
}

impl RankMetrics {
    pub fn from_ranks(ranks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(EvalError::Empty);
        }
        let n = ranks.len() as f64;
        let hit = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        let ndcg = |k: usize| ranks.iter().filter(|&&r| r <= k).map(|&r| 1.0 / ((r + 1) as f64).log2()).fold(0.0, |a, b| a + b) / n;
        Ok(Self {
            hit1: hit(1),
            hit3: hit(3),
            hit5: hit(5),
            // rank 1 contributes 1/log2(2) = 1 exactly
            ndcg1: hit(1),
            ndcg3: ndcg(3),
            ndcg5: ndcg(5),
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        })
    }

    /// Field-wise mean.
    pub fn mean(all: &[RankMetrics]) -> Result<Self> {
        if all.is_empty() {
            return Err(EvalError::Empty);
        }
        let n = all.len() as f64;
        let avg = |f: fn(&RankMetrics) -> f64| all.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            hit1: avg(|m| m.hit1),
            hit3: avg(|m| m.hit3),
            hit5: avg(|m| m.hit5),
            ndcg1: avg(|m| m.ndcg1),
            ndcg3: avg(|m| m.ndcg3),
            ndcg5: avg(|m| m.ndcg5),
            mrr: avg(|m| m.mrr),
        })
    }
}

pub fn rank_metrics(cases: &[RankedCase]) -> Result<RankMetrics> {
    RankMetrics::from_ranks(&cases.iter().map(|c| c.rank).collect::<Vec<_>>())
}

/// Cases with average node degree in (0, threshold].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub threshold: f64,
    pub count: usize,
    pub hit1: Option<f64>,
}

pub fn stratify_by_degree(cases: &[RankedCase], g: &HetGraph, thresholds: &[f64]) -> Result<Vec<StratumReport>> {
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::Thresholds(thresholds.to_vec()));
    }
    let degrees: Vec<f64> = cases.iter().map(|c| avg_node_degree(g, &c.positive)).collect();
    Ok(thresholds
        .iter()
        .map(|&n| {
            let ranks: Vec<usize> = cases.iter().zip(&degrees).filter(|&(_, &d)| d <= n).map(|(c, _)| c.rank).collect();
            let hit1 = (!ranks.is_empty()).then(|| ranks.iter().filter(|&&r| r == 1).count() as f64 / ranks.len() as f64);
            StratumReport { threshold: n, count: ranks.len(), hit1 }
        })
        .collect())
}

/// `count` strictly increasing thresholds at the empirical degree quantiles
/// k/count (linear interpolation), ending at the maximum. Falls back to even
/// spacing over (min, max] when quantiles repeat.
pub fn default_thresholds(degrees: &[f64], count: usize) -> Vec<f64> {
    if degrees.is_empty() || count == 0 {
        return Vec::new();
    }
    let mut d = degrees.to_vec();
    d.sort_by(f64::total_cmp);
    let (lo, hi) = (d[0], d[d.len() - 1]);
    if hi <= lo {
        return vec![hi];
    }
    let quantile = |q: f64| {
        let pos = q * (d.len() - 1) as f64;
        let (i, frac) = (pos.floor() as usize, pos.fract());
        if i + 1 < d.len() {
            d[i] + frac * (d[i + 1] - d[i])
        } else {
            d[i]
        }
    };
    let qs: Vec<f64> = (1..=count).map(|k| quantile(k as f64 / count as f64)).collect();
    if qs.windows(2).all(|w| w[0] < w[1]) {
        qs
    } else {
        (1..=count).map(|k| if k == count { hi } else { lo + (hi - lo) * k as f64 / count as f64 }).collect()
    }
}

pub fn write_strata(path: &Path, strata: &[StratumReport]) -> Result<()> {
    let mut s = String::from("N\tcount\thit1\n");
    for r in strata {
        let hit = r.hit1.map_or_else(|| "NA".to_string(), |h| h.to_string());
        let _ = writeln!(s, "{}\t{}\t{}", r.threshold, r.count, hit);
    }
    fs::write(path, s).map_err(|e| EvalError::Io { path: path.to_path_buf(), source: e })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette (Euclidean) for a two-class labeling.
pub fn silhouette(x: &Matrix, labels: &[u8]) -> Result<f64> {
    if labels.len() != x.rows() {
        return Err(EvalError::LengthMismatch(labels.len(), x.rows()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::OneClass { pos, neg });
    }
    if pos == 1 || neg == 1 {
        warn!("silhouette: a class has a single point; its silhouette is taken as 0");
    }
    let class = |l: u8| usize::from(l == 1);
    let sizes = [neg, pos];
    let total: f64 = (0..x.rows())
        .map(|i| {
            let own = class(labels[i]);
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = [0.0; 2];
            for j in 0..x.rows() {
                if j != i {
                    sums[class(labels[j])] += dist(x.row(i), x.row(j));
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = sums[1 - own] / sizes[1 - own] as f64;
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .sum();
    Ok(total / x.rows() as f64)
}

/// TSV rows `triplet_id<TAB>label<TAB>v1..vk`.
pub fn export_embeddings(path: &Path, ids: &[String], labels: &[u8], x: &Matrix) -> Result<()> {
    if ids.len() != x.rows() || labels.len() != x.rows() {
        return Err(EvalError::LengthMismatch(labels.len().min(ids.len()), x.rows()));
    }
    let mut s = String::new();
    for i in 0..x.rows() {
        let _ = write!(s, "{}\t{}", ids[i], labels[i]);
        for v in x.row(i) {
            let _ = write!(s, "\t{v}");
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| EvalError::Io { path: path.to_path_buf(), source: e })
}

/// Reads back an [`export_embeddings`] file.
pub fn read_embeddings(path: &Path) -> Result<(Vec<String>, Vec<u8>, Matrix)> {
    let body = fs::read_to_string(path).map_err(|e| EvalError::Io { path: path.to_path_buf(), source: e })?;
    let bad = |line: usize, detail: String| EvalError::Malformed { path: path.to_path_buf(), line, detail };
    let (mut ids, mut labels, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in body.lines().enumerate() {
        let mut cols = line.split('\t');
        let id = cols.next().ok_or_else(|| bad(i + 1, "empty line".into()))?;
        let label: u8 = cols.next().ok_or_else(|| bad(i + 1, "missing label".into()))?.parse().map_err(|e| bad(i + 1, format!("{e}")))?;
        let v: Vec<f64> = cols.map(str::parse).collect::<std::result::Result<_, _>>().map_err(|e| bad(i + 1, format!("{e}")))?;
        ids.push(id.to_string());
        labels.push(label);
        rows.push(v);
    }
    let x = Matrix::from_rows(&rows).map_err(|e| bad(0, e.to_string()))?;
    Ok((ids, labels, x))
}
