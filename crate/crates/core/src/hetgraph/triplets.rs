use serde::{Deserialize, Serialize};

use super::{EntityType, HetGraph, Relation};

/// A (gene, microbe, disease) index triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub gene: usize,
    pub microbe: usize,
    pub disease: usize,
}

impl Triplet {
    pub fn new(gene: usize, microbe: usize, disease: usize) -> Self {
        Self { gene, microbe, disease }
    }

    pub fn get(&self, t: EntityType) -> usize {
        match t {
            EntityType::Gene => self.gene,
            EntityType::Microbe => self.microbe,
            EntityType::Disease => self.disease,
        }
    }

    pub fn with(mut self, t: EntityType, idx: usize) -> Self {
        match t {
            EntityType::Gene => self.gene = idx,
            EntityType::Microbe => self.microbe = idx,
            EntityType::Disease => self.disease = idx,
        }
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Observed,
    SampledNegative,
}

/// A triplet with its label; label 1 exactly when observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledTriplet {
    pub triplet: Triplet,
    pub provenance: Provenance,
}

impl LabeledTriplet {
    pub fn positive(triplet: Triplet) -> Self {
        Self { triplet, provenance: Provenance::Observed }
    }

    pub fn negative(triplet: Triplet) -> Self {
        Self { triplet, provenance: Provenance::SampledNegative }
    }

    pub fn label(&self) -> u8 {
        match self.provenance {
            Provenance::Observed => 1,
            Provenance::SampledNegative => 0,
        }
    }
}

/// Every triangle (n, m, d), sorted by (gene, microbe, disease).
///
/// For each gene–microbe edge the candidate diseases are the intersection of
/// the gene's and the microbe's disease lists, both already sorted.
pub fn derive_positive_triplets(g: &HetGraph) -> Vec<LabeledTriplet> {
    let mut out = Vec::new();
    for n in 0..g.node_count(EntityType::Gene) {
        let gene_diseases = g.neighbors(Relation::GeneDisease, n);
        if gene_diseases.is_empty() {
            continue;
        }
        for &m in g.neighbors(Relation::GeneMicrobe, n) {
            let microbe_diseases = g.neighbors(Relation::MicrobeDisease, m);
            let (mut i, mut j) = (0, 0);
            while i < gene_diseases.len() && j < microbe_diseases.len() {
                match gene_diseases[i].cmp(&microbe_diseases[j]) {
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                    std::cmp::Ordering::Equal => {
                        out.push(LabeledTriplet::positive(Triplet::new(n, m, gene_diseases[i])));
                        i += 1;
                        j += 1;
                    }
                }
            }
        }
    }
    out
}

/// Mean undirected degree of the triplet's three nodes.
pub fn avg_node_degree(g: &HetGraph, t: &Triplet) -> f64 {
    let total = g.degree(EntityType::Gene, t.gene) + g.degree(EntityType::Microbe, t.microbe) + g.degree(EntityType::Disease, t.disease);
    total as f64 / 3.0
}
