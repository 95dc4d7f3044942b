use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::{EntityType, HetGraph, HetGraphBuilder, HetGraphError, NodeRegistry, Result};
use crate::numerics::Matrix;

/// Input file locations. Feature files are optional per type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub gene_microbe: PathBuf,
    pub gene_disease: PathBuf,
    pub microbe_disease: PathBuf,
    #[serde(default)]
    pub gene_features: Option<PathBuf>,
    #[serde(default)]
    pub microbe_features: Option<PathBuf>,
    #[serde(default)]
    pub disease_features: Option<PathBuf>,
}

impl DatasetPaths {
    /// Standard file names inside `dir`, all six files present.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            gene_microbe: dir.join("gene_microbe.tsv"),
            gene_disease: dir.join("gene_disease.tsv"),
            microbe_disease: dir.join("microbe_disease.tsv"),
            gene_features: Some(dir.join("gene_features.csv")),
            microbe_features: Some(dir.join("microbe_features.csv")),
            disease_features: Some(dir.join("disease_features.csv")),
        }
    }

    pub fn resolve_against(&self, base: &Path) -> Self {
        let j = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        Self {
            gene_microbe: j(&self.gene_microbe),
            gene_disease: j(&self.gene_disease),
            microbe_disease: j(&self.microbe_disease),
            gene_features: self.gene_features.as_ref().map(j),
            microbe_features: self.microbe_features.as_ref().map(j),
            disease_features: self.disease_features.as_ref().map(j),
        }
    }

    pub(crate) fn feature_path(&self, t: EntityType) -> Option<&PathBuf> {
        match t {
            EntityType::Gene => self.gene_features.as_ref(),
            EntityType::Microbe => self.microbe_features.as_ref(),
            EntityType::Disease => self.disease_features.as_ref(),
        }
    }
}

/// What ingestion had to repair or ignore.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    /// Duplicate association rows dropped, in GM, GD, MD order.
    pub duplicate_edges: [usize; 3],
    /// Feature rows for ids not present in any edge file, per type.
    pub ignored_feature_rows: [usize; 3],
    /// Nodes without a feature row (one-hot fallback), per type.
    pub one_hot_nodes: [usize; 3],
}

/// Parsed feature CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    /// Orders rows by `reg`. Nodes without a row get zero features plus a
    /// one-hot block that spans only the missing nodes.
    pub(crate) fn align(&self, reg: &NodeRegistry) -> (Matrix, usize, usize) {
        let lookup: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let ignored = self.ids.iter().filter(|id| reg.get(id).is_none()).count();
        let missing: Vec<usize> = (0..reg.len()).filter(|&i| !lookup.contains_key(reg.id(i))).collect();
        let width = self.dim + missing.len();
        let mut x = Matrix::zeros(reg.len(), width);
        for i in 0..reg.len() {
            if let Some(&r) = lookup.get(reg.id(i)) {
                x.row_mut(i)[..self.dim].copy_from_slice(&self.rows[r]);
            }
        }
        for (k, &i) in missing.iter().enumerate() {
            x.set(i, self.dim + k, 1.0);
        }
        (x, ignored, missing.len())
    }
}

fn io_err(path: &Path, source: std::io::Error) -> HetGraphError {
    HetGraphError::Io { path: path.to_path_buf(), source }
}

/// Two-column TSV, no header. Blank lines are skipped.
pub fn read_edge_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        match cols[..] {
            [a, b] if !a.trim().is_empty() && !b.trim().is_empty() => out.push((a.trim().to_string(), b.trim().to_string())),
            _ => {
                return Err(HetGraphError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    detail: format!("expected `id_a<TAB>id_b`, got {} column(s)", cols.len()),
                })
            }
        }
    }
    Ok(out)
}

/// CSV with header `id,f1,...,fk`.
pub fn read_feature_file(path: &Path) -> Result<FeatureTable> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(HetGraphError::Malformed { path: path.to_path_buf(), line: 1, detail: "missing header".into() });
    };
    let head: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if head.first().map(|s| s.trim()) != Some("id") {
        return Err(HetGraphError::Malformed { path: path.to_path_buf(), line: 1, detail: "header must start with `id`".into() });
    }
    let dim = head.len() - 1;
    let mut table = FeatureTable { ids: Vec::new(), dim, rows: Vec::new() };
    for (i, line) in lines {
        let cols: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        if cols.len() != dim + 1 {
            return Err(HetGraphError::FeatureDim { path: path.to_path_buf(), line: i + 1, expected: dim, found: cols.len() - 1 });
        }
        let values = cols[1..]
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| HetGraphError::Malformed { path: path.to_path_buf(), line: i + 1, detail: e.to_string() })?;
        table.ids.push(cols[0].trim().to_string());
        table.rows.push(values);
    }
    Ok(table)
}

pub fn write_edge_file(path: &Path, rows: &[(String, String)]) -> Result<()> {
    let mut s = String::new();
    for (a, b) in rows {
        let _ = writeln!(s, "{a}\t{b}");
    }
    fs::write(path, s).map_err(|e| io_err(path, e))
}

/// Writes shortest round-trip float representations.
pub fn write_feature_file(path: &Path, ids: &[String], x: &Matrix) -> Result<()> {
    let mut s = String::from("id");
    for k in 1..=x.cols() {
        let _ = write!(s, ",f{k}");
    }
    s.push('\n');
    for (i, id) in ids.iter().enumerate() {
        s.push_str(id);
        for v in x.row(i) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| io_err(path, e))
}

/// Builds a graph from association records in GM, GD, MD order.
pub(crate) fn build_graph(
    records: [&[(String, String)]; 3],
    features: [Option<FeatureTable>; 3],
) -> Result<(HetGraph, LoadReport)> {
    use EntityType::*;
    let kinds = [(Gene, Microbe), (Gene, Disease), (Microbe, Disease)];
    let mut b = HetGraphBuilder::new();
    for (rows, (ta, tb)) in records.iter().zip(kinds) {
        for (a, bid) in rows.iter() {
            b.add_association(ta, a, tb, bid)?;
        }
    }
    for (t, table) in EntityType::ALL.into_iter().zip(features) {
        if let Some(table) = table {
            b.set_features(t, table);
        }
    }
    let duplicate_edges = b.duplicates();
    let (g, ignored_feature_rows, one_hot_nodes) = b.build();
    Ok((g, LoadReport { duplicate_edges, ignored_feature_rows, one_hot_nodes }))
}

/// Reads the three association files and optional feature files.
pub fn load_edges(paths: &DatasetPaths) -> Result<(HetGraph, LoadReport)> {
    let gm = read_edge_file(&paths.gene_microbe)?;
    let gd = read_edge_file(&paths.gene_disease)?;
    let md = read_edge_file(&paths.microbe_disease)?;
    let mut features = [None, None, None];
    for t in EntityType::ALL {
        if let Some(p) = paths.feature_path(t) {
            features[t.index()] = Some(read_feature_file(p)?);
        }
    }
    let (g, report) = build_graph([&gm, &gd, &md], features)?;
    let dup: usize = report.duplicate_edges.iter().sum();
    if dup > 0 {
        warn!("dropped {dup} duplicate association rows {:?}", report.duplicate_edges);
    }
    for t in EntityType::ALL {
        let ign = report.ignored_feature_rows[t.index()];
        if ign > 0 {
            warn!("ignored {ign} {} feature rows for nodes absent from the edge files", t.name());
        }
        let miss = report.one_hot_nodes[t.index()];
        if miss > 0 && paths.feature_path(t).is_some() {
            warn!("{miss} {} nodes lack feature rows; using one-hot fallback", t.name());
        }
    }
    Ok((g, report))
}
