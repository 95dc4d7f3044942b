use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::io::build_graph;
use super::{DatasetPaths, EntityType, FeatureTable, HetGraph, HetGraphError, Result};
use crate::numerics::{sigmoid, Matrix};

const BISECTION_STEPS: usize = 60;

/// Planted-latent generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_genes: usize,
    pub n_microbes: usize,
    pub n_diseases: usize,
    pub latent_dim: usize,
    pub edge_density_target: f64,
    pub seed: u64,
    /// Slope `a` of the edge logit `a·⟨u,v⟩ + b`.
    pub sharpness: f64,
    /// Distance of each mixture mean from the origin.
    pub separation: f64,
    /// Per-coordinate std of latents around their component mean.
    pub spread: f64,
    pub feature_noise: f64,
    /// Fixed `b`; skips calibration.
    pub bias: Option<f64>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_genes: 40,
            n_microbes: 30,
            n_diseases: 30,
            latent_dim: 8,
            edge_density_target: 0.15,
            seed: 7,
            sharpness: 3.0,
            separation: 1.0,
            spread: 0.5,
            feature_noise: 0.1,
            bias: None,
        }
    }
}

impl SyntheticConfig {
    pub fn sizes(&self) -> [usize; 3] {
        [self.n_genes, self.n_microbes, self.n_diseases]
    }

    fn validate(&self) -> Result<()> {
        if self.sizes().iter().any(|&n| n < 2) {
            return Err(HetGraphError::InvalidConfig(format!("every node type needs at least 2 nodes, got {:?}", self.sizes())));
        }
        if self.latent_dim == 0 {
            return Err(HetGraphError::InvalidConfig("latent_dim must be positive".into()));
        }
        if self.bias.is_none() && !(self.edge_density_target > 0.0 && self.edge_density_target < 1.0) {
            return Err(HetGraphError::InvalidConfig(format!("edge density {} outside (0, 1)", self.edge_density_target)));
        }
        if !(self.spread >= 0.0 && self.feature_noise >= 0.0) {
            return Err(HetGraphError::InvalidConfig("spread and feature_noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// Generated graph plus everything needed to write it out.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub graph: HetGraph,
    /// Latent vectors indexed by generator order (node `G{i}` is row `i`).
    pub latents: [Matrix; 3],
    pub bias: f64,
    /// Realized density over all generated cross-type pairs.
    pub density: f64,
    records: [Vec<(String, String)>; 3],
    features: [FeatureTable; 3],
}

impl SyntheticDataset {
    /// Writes the three edge files and three feature files into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<DatasetPaths> {
        fs::create_dir_all(dir).map_err(|e| HetGraphError::Io { path: dir.to_path_buf(), source: e })?;
        let paths = DatasetPaths::in_dir(dir);
        super::write_edge_file(&paths.gene_microbe, &self.records[0])?;
        super::write_edge_file(&paths.gene_disease, &self.records[1])?;
        super::write_edge_file(&paths.microbe_disease, &self.records[2])?;
        for t in EntityType::ALL {
            let table = &self.features[t.index()];
            let x = Matrix::from_rows(&table.rows).expect("rectangular");
            super::write_feature_file(paths.feature_path(t).expect("set by in_dir"), &table.ids, &x)?;
        }
        Ok(paths)
    }
}

fn node_id(t: EntityType, i: usize) -> String {
    format!("{}{}", t.letter(), i)
}

/// Cross-type pair with its latent inner product and pre-drawn uniform.
struct PairDraw {
    kind: usize,
    a: usize,
    b: usize,
    score: f64,
    u: f64,
}

fn realized(pairs: &[PairDraw], sharpness: f64, bias: f64) -> usize {
    pairs.iter().filter(|p| p.u < sigmoid(sharpness * p.score + bias)).count()
}

/// Bisects `b` until the realized density is within 10% of the target.
fn calibrate(pairs: &[PairDraw], sharpness: f64, target: f64) -> Result<f64> {
    let total = pairs.len() as f64;
    let density = |b: f64| realized(pairs, sharpness, b) as f64 / total;
    let (mut lo, mut hi) = (-50.0_f64, 50.0_f64);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let d = density(mid);
        let gap = (d - target).abs();
        if gap < best.0 {
            best = (gap, mid, d);
        }
        if gap <= 0.1 * target {
            return Ok(mid);
        }
        if d < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(HetGraphError::Calibration { achieved: best.2, target })
}

/// Latents from a two-component Gaussian mixture; cross-type edges with
/// probability `sigmoid(a·⟨u,v⟩ + b)`; features are noisy latents.
///
/// Nodes are named `G0.., M0.., D0..`. The graph is assembled from the same
/// records and feature tables that `write_to` emits, so loading the written
/// files reproduces it exactly. Nodes that end up with no association are not
/// part of the graph (the loader cannot see them either).
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.latent_dim;

    let mut mean: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    mean.iter_mut().for_each(|x| *x *= cfg.separation / norm);
    let spread = Normal::new(0.0, cfg.spread).expect("validated");
    let latents = cfg.sizes().map(|n| {
        let mut z = Matrix::zeros(n, dim);
        for i in 0..n {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            for (k, v) in z.row_mut(i).iter_mut().enumerate() {
                *v = sign * mean[k] + spread.sample(&mut rng);
            }
        }
        z
    });

    use EntityType::*;
    let kinds = [(Gene, Microbe), (Gene, Disease), (Microbe, Disease)];
    let mut pairs = Vec::new();
    for (kind, (ta, tb)) in kinds.into_iter().enumerate() {
        let (za, zb) = (&latents[ta.index()], &latents[tb.index()]);
        for a in 0..za.rows() {
            for b in 0..zb.rows() {
                let score = za.row(a).iter().zip(zb.row(b)).map(|(x, y)| x * y).sum();
                pairs.push(PairDraw { kind, a, b, score, u: rng.random() });
            }
        }
    }
    let bias = match cfg.bias {
        Some(b) => b,
        None => calibrate(&pairs, cfg.sharpness, cfg.edge_density_target)?,
    };

    let mut records: [Vec<(String, String)>; 3] = Default::default();
    for p in &pairs {
        if p.u < sigmoid(cfg.sharpness * p.score + bias) {
            let (ta, tb) = kinds[p.kind];
            records[p.kind].push((node_id(ta, p.a), node_id(tb, p.b)));
        }
    }

    let noise = Normal::new(0.0, cfg.feature_noise).expect("validated");
    let features = EntityType::ALL.map(|t| {
        let z = &latents[t.index()];
        FeatureTable {
            ids: (0..z.rows()).map(|i| node_id(t, i)).collect(),
            dim,
            rows: (0..z.rows()).map(|i| z.row(i).iter().map(|v| v + noise.sample(&mut rng)).collect()).collect(),
        }
    });

    let (graph, _) = build_graph([&records[0], &records[1], &records[2]], features.clone().map(Some))?;
    let density = records.iter().map(Vec::len).sum::<usize>() as f64 / pairs.len() as f64;
    Ok(SyntheticDataset { graph, latents, bias, density, records, features })
}
