//! Causal metapaths, their directed subgraphs and instance enumeration,
//! plus the symmetric length-5 and pairwise length-2 families used by ablations.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hetgraph::{EntityType, HetGraph, Relation};

/// Hard cap on instances per metapath.
pub const MAX_INSTANCES: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum MetapathError {
    #[error("{0} is not a causal length-3 metapath")]
    NotCausal(String),
    #[error("metapath {metapath} has more than {limit} instances")]
    TooManyInstances { metapath: String, limit: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, MetapathError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetapathKind {
    Causal3,
    Symmetric5,
    Pairwise2,
}

impl MetapathKind {
    pub fn len(self) -> usize {
        match self {
            MetapathKind::Causal3 => 3,
            MetapathKind::Symmetric5 => 5,
            MetapathKind::Pairwise2 => 2,
        }
    }
}

/// Ordered node-type sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Metapath {
    types: Vec<EntityType>,
    kind: MetapathKind,
}

impl Metapath {
    fn from_letters(s: &str, kind: MetapathKind) -> Self {
        let types: Vec<EntityType> = s.chars().map(|c| EntityType::from_letter(c).expect("static path")).collect();
        debug_assert_eq!(types.len(), kind.len());
        Self { types, kind }
    }

    pub fn types(&self) -> &[EntityType] {
        &self.types
    }

    pub fn kind(&self) -> MetapathKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn relations(&self) -> Vec<Relation> {
        self.types.windows(2).map(|w| Relation::between(w[0], w[1]).expect("consecutive types differ")).collect()
    }

    pub fn reversed(&self) -> Metapath {
        Metapath { types: self.types.iter().rev().copied().collect(), kind: self.kind }
    }

    /// "G-M-D" style label.
    pub fn name(&self) -> String {
        self.types.iter().map(|t| t.letter().to_string()).collect::<Vec<_>>().join("-")
    }
}

impl fmt::Display for Metapath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// G-M-D, G-D-M, D-M-G, D-G-M, M-D-G, M-G-D.
pub fn causal_metapaths() -> Vec<Metapath> {
    ["GMD", "GDM", "DMG", "DGM", "MDG", "MGD"].iter().map(|s| Metapath::from_letters(s, MetapathKind::Causal3)).collect()
}

/// Metapaths of one family; `Causal3` gives [`causal_metapaths`].
pub fn metapaths(kind: MetapathKind) -> Vec<Metapath> {
    let letters: &[&str] = match kind {
        MetapathKind::Causal3 => return causal_metapaths(),
        MetapathKind::Symmetric5 => &["GMDMG", "GDMDG", "MGDGM", "MDGDM", "DGMGD", "DMGMD"],
        MetapathKind::Pairwise2 => &["GM", "MG", "GD", "DG", "MD", "DM"],
    };
    letters.iter().map(|s| Metapath::from_letters(s, kind)).collect()
}

/// Directed subgraph of a causal metapath: its two relation edge sets.
#[derive(Clone, Copy, Debug)]
pub struct CausalSubgraph<'g> {
    graph: &'g HetGraph,
    relations: [Relation; 2],
}

impl<'g> CausalSubgraph<'g> {
    pub fn graph(&self) -> &'g HetGraph {
        self.graph
    }

    pub fn relations(&self) -> [Relation; 2] {
        self.relations
    }

    pub fn edge_count(&self) -> usize {
        self.relations.iter().map(|&r| self.graph.edge_count(r)).sum()
    }
}

pub fn extract_subgraph<'g>(g: &'g HetGraph, p: &Metapath) -> Result<CausalSubgraph<'g>> {
    if p.kind != MetapathKind::Causal3 {
        return Err(MetapathError::NotCausal(p.name()));
    }
    let rels = p.relations();
    Ok(CausalSubgraph { graph: g, relations: [rels[0], rels[1]] })
}

/// All instances of one metapath, row-major with stride `len`.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceTable {
    metapath: Metapath,
    nodes: Vec<usize>,
    sizes: [usize; 3],
}

impl InstanceTable {
    pub fn metapath(&self) -> &Metapath {
        &self.metapath
    }

    pub fn len(&self) -> usize {
        self.nodes.len() / self.metapath.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn instance(&self, i: usize) -> &[usize] {
        let l = self.metapath.len();
        &self.nodes[i * l..(i + 1) * l]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.nodes.chunks_exact(self.metapath.len())
    }

    /// Flat node indices, stride = metapath length.
    pub fn flat(&self) -> &[usize] {
        &self.nodes
    }

    /// Node count per type of the graph the table came from.
    pub fn sizes(&self) -> [usize; 3] {
        self.sizes
    }

    /// Positions at which type `t` occurs along the metapath.
    pub fn positions_of(&self, t: EntityType) -> Vec<usize> {
        self.metapath.types.iter().enumerate().filter(|&(_, &x)| x == t).map(|(i, _)| i).collect()
    }

    /// S_p(v): sorted indices of instances that contain `v` of type `t` anywhere.
    pub fn involving(&self, t: EntityType, v: usize) -> Vec<usize> {
        let pos = self.positions_of(t);
        (0..self.len()).filter(|&i| pos.iter().any(|&k| self.instance(i)[k] == v)).collect()
    }

    /// S_p(v) for every node of type `t`.
    pub fn membership(&self, t: EntityType) -> Vec<Vec<usize>> {
        let pos = self.positions_of(t);
        let mut out = vec![Vec::new(); self.sizes[t.index()]];
        for (i, inst) in self.iter().enumerate() {
            for &k in &pos {
                let list: &mut Vec<usize> = &mut out[inst[k]];
                if list.last() != Some(&i) {
                    list.push(i);
                }
            }
        }
        out
    }
}

/// Instances of a causal subgraph, by joining on the intermediate node.
pub fn enumerate_instances(sg: &CausalSubgraph<'_>) -> Result<InstanceTable> {
    let g = sg.graph;
    let [r1, r2] = sg.relations;
    let p = Metapath { types: vec![r1.src(), r1.dst(), r2.dst()], kind: MetapathKind::Causal3 };
    enumerate_with_limit(g, &p, MAX_INSTANCES)
}

/// Instances of any metapath: walks whose consecutive pairs are edges.
/// Revisiting a node (e.g. g1-m1-d1-m1-g1) is allowed.
pub fn enumerate_walks(g: &HetGraph, p: &Metapath) -> Result<InstanceTable> {
    enumerate_with_limit(g, p, MAX_INSTANCES)
}

pub fn enumerate_with_limit(g: &HetGraph, p: &Metapath, limit: usize) -> Result<InstanceTable> {
    let rels = p.relations();
    let too_many = || MetapathError::TooManyInstances { metapath: p.name(), limit };
    let mut nodes = Vec::new();
    match p.len() {
        2 => {
            for (h, t) in g.edges(rels[0]) {
                nodes.extend([h, t]);
            }
            if nodes.len() / 2 > limit {
                return Err(too_many());
            }
        }
        3 => {
            let (r1, r2) = (rels[0], rels[1]);
            let mut triples = Vec::new();
            for e in 0..g.node_count(r1.dst()) {
                let heads = g.neighbors(r1.reverse(), e);
                let tails = g.neighbors(r2, e);
                if triples.len() + heads.len() * tails.len() > limit {
                    return Err(too_many());
                }
                for &h in heads {
                    for &t in tails {
                        triples.push([h, e, t]);
                    }
                }
            }
            triples.sort_unstable();
            nodes = triples.into_iter().flatten().collect();
        }
        _ => {
            let l = p.len();
            let mut walk = Vec::with_capacity(l);
            for h in 0..g.node_count(p.types[0]) {
                walk.push(h);
                extend_walk(g, &rels, &mut walk, &mut nodes, l, limit).map_err(|_| too_many())?;
                walk.pop();
            }
        }
    }
    Ok(InstanceTable { metapath: p.clone(), nodes, sizes: g.sizes() })
}

// Depth-first in sorted neighbor order, which yields lexicographic output.
fn extend_walk(g: &HetGraph, rels: &[Relation], walk: &mut Vec<usize>, out: &mut Vec<usize>, l: usize, limit: usize) -> std::result::Result<(), ()> {
    if walk.len() == l {
        if out.len() / l >= limit {
            return Err(());
        }
        out.extend_from_slice(walk);
        return Ok(());
    }
    let last = *walk.last().expect("non-empty walk");
    for &n in g.neighbors(rels[walk.len() - 1], last) {
        walk.push(n);
        extend_walk(g, rels, walk, out, l, limit)?;
        walk.pop();
    }
    Ok(())
}

/// Instance tables for every metapath of a family, computed once per graph.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceCache {
    kind: MetapathKind,
    tables: Vec<InstanceTable>,
}

impl InstanceCache {
    pub fn build(g: &HetGraph, kind: MetapathKind) -> Result<Self> {
        let paths = metapaths(kind);
        let tables = paths.par_iter().map(|p| enumerate_walks(g, p)).collect::<Result<Vec<_>>>()?;
        Ok(Self { kind, tables })
    }

    pub fn kind(&self) -> MetapathKind {
        self.kind
    }

    pub fn tables(&self) -> &[InstanceTable] {
        &self.tables
    }

    pub fn total_instances(&self) -> usize {
        self.tables.iter().map(InstanceTable::len).sum()
    }

    /// TSV audit dump: metapath name, then one column per position (external ids).
    pub fn write_dump(&self, g: &HetGraph, path: &Path) -> Result<()> {
        let mut s = String::new();
        for table in &self.tables {
            let name = table.metapath.name();
            let types = table.metapath.types();
            for inst in table.iter() {
                s.push_str(&name);
                for (&t, &v) in types.iter().zip(inst) {
                    let _ = write!(s, "\t{}", g.registry(t).id(v));
                }
                s.push('\n');
            }
        }
        fs::write(path, s).map_err(|e| MetapathError::Io { path: path.to_path_buf(), source: e })
    }
}
