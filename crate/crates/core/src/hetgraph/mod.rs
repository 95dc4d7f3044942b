//! Tri-partite gene / microbe / disease association graph.
//!
//! Every undirected association is stored in both directions, giving six
//! directed relations. Nodes get dense per-type indices in order of first
//! appearance.

mod io;
mod sampling;
mod split;
mod synthetic;
mod triplets;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Matrix;

pub use io::{load_edges, read_edge_file, read_feature_file, write_edge_file, write_feature_file, DatasetPaths, FeatureTable, LoadReport};
pub use sampling::{sample_negatives, sample_training_negatives};
pub use split::{make_split, FoldSplit, SplitPlan};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticDataset};
pub use triplets::{avg_node_degree, derive_positive_triplets, LabeledTriplet, Provenance, Triplet};

#[derive(Debug, Error)]
pub enum HetGraphError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {detail}")]
    Malformed { path: PathBuf, line: usize, detail: String },
    #[error("{path}:{line}: expected {expected} feature values, found {found}")]
    FeatureDim { path: PathBuf, line: usize, expected: usize, found: usize },
    #[error("need at least {needed} positives, got {got}")]
    TooFewPositives { needed: usize, got: usize },
    #[error("could not draw enough distinct negatives for positive {positive}")]
    NegativeSampling { positive: String },
    #[error("triplet universe of {universe} cannot hold negatives beyond {known} positives")]
    UniverseTooSmall { universe: usize, known: usize },
    #[error("density calibration failed: achieved {achieved:.4} for target {target:.4}")]
    Calibration { achieved: f64, target: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown triplet id `{0}`")]
    UnknownTriplet(String),
    #[error("split file: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HetGraphError>;

/// Node type. Ordered Gene < Microbe < Disease.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityType {
    Gene,
    Microbe,
    Disease,
}

impl EntityType {
    pub const ALL: [EntityType; 3] = [EntityType::Gene, EntityType::Microbe, EntityType::Disease];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            EntityType::Gene => 'G',
            EntityType::Microbe => 'M',
            EntityType::Disease => 'D',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'G' => Some(EntityType::Gene),
            'M' => Some(EntityType::Microbe),
            'D' => Some(EntityType::Disease),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EntityType::Gene => "gene",
            EntityType::Microbe => "microbe",
            EntityType::Disease => "disease",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// One of the six directed relations between distinct node types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    GeneMicrobe,
    MicrobeGene,
    GeneDisease,
    DiseaseGene,
    MicrobeDisease,
    DiseaseMicrobe,
}

impl Relation {
    pub const ALL: [Relation; 6] = [
        Relation::GeneMicrobe,
        Relation::MicrobeGene,
        Relation::GeneDisease,
        Relation::DiseaseGene,
        Relation::MicrobeDisease,
        Relation::DiseaseMicrobe,
    ];

    pub fn between(src: EntityType, dst: EntityType) -> Option<Relation> {
        use EntityType::*;
        Some(match (src, dst) {
            (Gene, Microbe) => Relation::GeneMicrobe,
            (Microbe, Gene) => Relation::MicrobeGene,
            (Gene, Disease) => Relation::GeneDisease,
            (Disease, Gene) => Relation::DiseaseGene,
            (Microbe, Disease) => Relation::MicrobeDisease,
            (Disease, Microbe) => Relation::DiseaseMicrobe,
            _ => return None,
        })
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn src(self) -> EntityType {
        self.endpoints().0
    }

    pub fn dst(self) -> EntityType {
        self.endpoints().1
    }

    pub fn endpoints(self) -> (EntityType, EntityType) {
        use EntityType::*;
        match self {
            Relation::GeneMicrobe => (Gene, Microbe),
            Relation::MicrobeGene => (Microbe, Gene),
            Relation::GeneDisease => (Gene, Disease),
            Relation::DiseaseGene => (Disease, Gene),
            Relation::MicrobeDisease => (Microbe, Disease),
            Relation::DiseaseMicrobe => (Disease, Microbe),
        }
    }

    pub fn reverse(self) -> Relation {
        let (a, b) = self.endpoints();
        Relation::between(b, a).expect("distinct types")
    }

    /// Short label such as `G>M`.
    pub fn label(self) -> String {
        let (a, b) = self.endpoints();
        format!("{a}>{b}")
    }
}

/// External string ids ↔ dense indices for one node type.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodeRegistry {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl NodeRegistry {
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, idx: usize) -> &str {
        &self.ids[idx]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Immutable heterogeneous graph with per-type features.
#[derive(Clone, Debug, PartialEq)]
pub struct HetGraph {
    registries: [NodeRegistry; 3],
    /// Per relation, per source node: sorted destination indices.
    adjacency: [Vec<Vec<usize>>; 6],
    features: [Matrix; 3],
}

impl HetGraph {
    pub fn node_count(&self, t: EntityType) -> usize {
        self.registries[t.index()].len()
    }

    pub fn sizes(&self) -> [usize; 3] {
        EntityType::ALL.map(|t| self.node_count(t))
    }

    pub fn registry(&self, t: EntityType) -> &NodeRegistry {
        &self.registries[t.index()]
    }

    pub fn features(&self, t: EntityType) -> &Matrix {
        &self.features[t.index()]
    }

    /// Sorted out-neighbours of `u` under `rel`.
    pub fn neighbors(&self, rel: Relation, u: usize) -> &[usize] {
        &self.adjacency[rel.index()][u]
    }

    pub fn has_edge(&self, rel: Relation, u: usize, v: usize) -> bool {
        self.adjacency[rel.index()].get(u).is_some_and(|n| n.binary_search(&v).is_ok())
    }

    pub fn edge_count(&self, rel: Relation) -> usize {
        self.adjacency[rel.index()].iter().map(Vec::len).sum()
    }

    /// Directed edges of `rel` in lexicographic order.
    pub fn edges(&self, rel: Relation) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency[rel.index()].iter().enumerate().flat_map(|(u, n)| n.iter().map(move |&v| (u, v)))
    }

    /// Undirected degree: distinct neighbours across both other node types.
    pub fn degree(&self, t: EntityType, idx: usize) -> usize {
        EntityType::ALL
            .iter()
            .filter(|&&o| o != t)
            .map(|&o| self.neighbors(Relation::between(t, o).expect("distinct"), idx).len())
            .sum()
    }

    /// Fraction of cross-type node pairs that are associated.
    pub fn density(&self) -> f64 {
        let [n, m, d] = self.sizes();
        let pairs = n * m + n * d + m * d;
        if pairs == 0 {
            return 0.0;
        }
        let edges = self.edge_count(Relation::GeneMicrobe) + self.edge_count(Relation::GeneDisease) + self.edge_count(Relation::MicrobeDisease);
        edges as f64 / pairs as f64
    }

    pub fn triplet_id(&self, t: &Triplet) -> String {
        format!(
            "{}|{}|{}",
            self.registries[0].id(t.gene),
            self.registries[1].id(t.microbe),
            self.registries[2].id(t.disease)
        )
    }

    pub fn parse_triplet_id(&self, s: &str) -> Result<Triplet> {
        let parts: Vec<&str> = s.split('|').collect();
        let [g, m, d] = parts[..] else {
            return Err(HetGraphError::UnknownTriplet(s.to_string()));
        };
        let lookup = |t: EntityType, id: &str| self.registries[t.index()].get(id).ok_or_else(|| HetGraphError::UnknownTriplet(s.to_string()));
        Ok(Triplet {
            gene: lookup(EntityType::Gene, g)?,
            microbe: lookup(EntityType::Microbe, m)?,
            disease: lookup(EntityType::Disease, d)?,
        })
    }

    /// Copy of this graph with one-hot identity features for every type.
    pub fn with_one_hot_features(&self) -> HetGraph {
        let mut g = self.clone();
        g.features = EntityType::ALL.map(|t| Matrix::identity(self.node_count(t)));
        g
    }
}

/// Incremental construction; deduplicates associations.
#[derive(Debug, Default)]
pub struct HetGraphBuilder {
    registries: [NodeRegistry; 3],
    /// Undirected associations keyed by (lower type, higher type): GM, GD, MD.
    associations: [BTreeSet<(usize, usize)>; 3],
    duplicates: [usize; 3],
    features: [Option<FeatureTable>; 3],
}

fn pair_slot(a: EntityType, b: EntityType) -> Option<usize> {
    use EntityType::*;
    match (a, b) {
        (Gene, Microbe) => Some(0),
        (Gene, Disease) => Some(1),
        (Microbe, Disease) => Some(2),
        _ => None,
    }
}

impl HetGraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, t: EntityType, id: &str) -> usize {
        self.registries[t.index()].intern(id)
    }

    /// Adds an undirected association; returns false if it was already present.
    pub fn add_association(&mut self, a: EntityType, a_id: &str, b: EntityType, b_id: &str) -> Result<bool> {
        let (lo, lo_id, hi, hi_id) = if a <= b { (a, a_id, b, b_id) } else { (b, b_id, a, a_id) };
        let slot = pair_slot(lo, hi).ok_or_else(|| HetGraphError::InvalidConfig(format!("association {a}-{b} is not cross-type")))?;
        let u = self.add_node(lo, lo_id);
        let v = self.add_node(hi, hi_id);
        let fresh = self.associations[slot].insert((u, v));
        if !fresh {
            self.duplicates[slot] += 1;
        }
        Ok(fresh)
    }

    pub fn set_features(&mut self, t: EntityType, table: FeatureTable) {
        self.features[t.index()] = Some(table);
    }

    pub fn duplicates(&self) -> [usize; 3] {
        self.duplicates
    }

    /// Finalizes adjacency and features. Returns per-type counts of feature rows
    /// ignored (unknown node) and nodes that fell back to one-hot features.
    pub fn build(self) -> (HetGraph, [usize; 3], [usize; 3]) {
        let sizes = self.registries.clone().map(|r| r.len());
        let mut adjacency: [Vec<Vec<usize>>; 6] = Relation::ALL.map(|r| vec![Vec::new(); sizes[r.src().index()]]);
        let kinds = [(EntityType::Gene, EntityType::Microbe), (EntityType::Gene, EntityType::Disease), (EntityType::Microbe, EntityType::Disease)];
        for (slot, &(a, b)) in kinds.iter().enumerate() {
            let fwd = Relation::between(a, b).expect("distinct").index();
            let bwd = Relation::between(b, a).expect("distinct").index();
            for &(u, v) in &self.associations[slot] {
                adjacency[fwd][u].push(v);
                adjacency[bwd][v].push(u);
            }
        }
        for rel in adjacency.iter_mut() {
            for n in rel.iter_mut() {
                n.sort_unstable();
            }
        }
        let mut ignored = [0; 3];
        let mut missing = [0; 3];
        let features = EntityType::ALL.map(|t| {
            let reg = &self.registries[t.index()];
            match &self.features[t.index()] {
                None => {
                    missing[t.index()] = reg.len();
                    Matrix::identity(reg.len())
                }
                Some(table) => {
                    let (x, ign, miss) = table.align(reg);
                    ignored[t.index()] = ign;
                    missing[t.index()] = miss;
                    x
                }
            }
        });
        (HetGraph { registries: self.registries, adjacency, features }, ignored, missing)
    }
}
