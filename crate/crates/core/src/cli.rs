//! Run configuration and the commands behind the `hcmgnn` binary.
//!
//! Every command writes under `out/`: `run.json` (resolved config),
//! `metrics/`, `checkpoints/` and `exports/`. Synthetic datasets go to `out/data/`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::{default_thresholds, export_embeddings, silhouette, stratify_by_degree, write_strata, EvalError, RankMetrics, StratumReport};
use crate::hetgraph::{
    avg_node_degree, derive_positive_triplets, generate_synthetic, load_edges, make_split, DatasetPaths, HetGraph, HetGraphError, LabeledTriplet, Relation, SplitPlan, SyntheticConfig, Triplet,
};
use crate::model::{Model, ModelConfig, ModelError, ModelParams, Variant};
use crate::training::{derive_seed, fit, run_cv, run_test, FoldLabel, MetricsRecord, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] HetGraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub folds: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { test_fraction: 0.1, folds: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrataConfig {
    /// Explicit thresholds; otherwise `count` quantile thresholds.
    pub thresholds: Option<Vec<f64>>,
    pub count: usize,
}

impl Default for StrataConfig {
    fn default() -> Self {
        Self { thresholds: None, count: 12 }
    }
}

/// One JSON document describing a run.
///
/// `seed` is fanned out with [`derive_seed`]: the split uses label `"split"`,
/// training `"train"` (written into `train.seed` on resolution) and test
/// negatives `"test"`. The synthetic block keeps its own seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetPaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub strata: StrataConfig,
    /// Fold whose training part fits the model evaluated on the test set.
    #[serde(default)]
    pub test_fold: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_seed() -> u64 {
    7
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/hcmgnn")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            synthetic: Some(SyntheticConfig::default()),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: SplitConfig::default(),
            strata: StrataConfig::default(),
            test_fold: 0,
            seed: default_seed(),
            out: default_out(),
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
}

impl RunConfig {
    /// Reads a config file; relative dataset paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: RunConfig = serde_json::from_str(&body).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(d) = &cfg.dataset {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            cfg.dataset = Some(d.resolve_against(base));
        }
        Ok(cfg)
    }

    /// Applies overrides, fans out the seed and checks invariants.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(v) = o.variant {
            self.model.variant = v;
        }
        self.train.seed = derive_seed(self.seed, "train");
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, &self.synthetic) {
            (Some(_), Some(_)) => return Err(CliError::Config("give either `dataset` or `synthetic`, not both".into())),
            (None, None) => return Err(CliError::Config("one of `dataset` or `synthetic` is required".into())),
            (Some(d), None) => {
                let mut files = vec![&d.gene_microbe, &d.gene_disease, &d.microbe_disease];
                files.extend([&d.gene_features, &d.microbe_features, &d.disease_features].into_iter().flatten());
                if let Some(missing) = files.into_iter().find(|p| !p.is_file()) {
                    return Err(CliError::Config(format!("dataset file {} not found", missing.display())));
                }
            }
            (None, Some(_)) => {}
        }
        self.model.validate()?;
        self.train.validate()?;
        if self.split.folds < 2 {
            return Err(CliError::Config("split.folds must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.split.test_fraction) {
            return Err(CliError::Config(format!("split.test_fraction {} outside [0, 1)", self.split.test_fraction)));
        }
        if self.test_fold >= self.split.folds {
            return Err(CliError::Config(format!("test_fold {} with {} folds", self.test_fold, self.split.folds)));
        }
        Ok(())
    }

    fn path(&self, parts: &[&str]) -> PathBuf {
        parts.iter().fold(self.out.clone(), |p, s| p.join(s))
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, body).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    write_file(path, &body)
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    for dir in ["metrics", "checkpoints", "exports"] {
        let p = cfg.path(&[dir]);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    write_json(&cfg.path(&["run.json"]), cfg)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Graph for the run: files from `dataset`, or the synthetic graph in memory.
pub fn load_graph(cfg: &RunConfig) -> Result<HetGraph> {
    match (&cfg.dataset, &cfg.synthetic) {
        (Some(paths), _) => {
            let (g, report) = load_edges(paths)?;
            info!("loaded {:?} nodes; ingestion report {:?}", g.sizes(), report);
            Ok(g)
        }
        (None, Some(s)) => Ok(generate_synthetic(s)?.graph),
        (None, None) => Err(CliError::Config("no data source".into())),
    }
}

fn positives(g: &HetGraph) -> Vec<Triplet> {
    derive_positive_triplets(g).into_iter().map(|l| l.triplet).collect()
}

/// Seeded split of the graph's positives, also written to `out/split.json`.
pub fn plan_split(cfg: &RunConfig, g: &HetGraph) -> Result<SplitPlan> {
    let plan = make_split(&positives(g), cfg.split.test_fraction, cfg.split.folds, derive_seed(cfg.seed, "split"))?;
    write_file(&cfg.path(&["split.json"]), &plan.to_json(g))?;
    Ok(plan)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SyntheticConfig,
    pub sizes: [usize; 3],
    pub bias: f64,
    pub density: f64,
    pub edges: [usize; 3],
    pub triangles: usize,
    /// File name to SHA-256 of its contents.
    pub files: Vec<(String, String)>,
}

/// Writes the six dataset files and `manifest.json` to `out/data/`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthManifest> {
    let s = cfg.synthetic.as_ref().ok_or_else(|| CliError::Config("synth needs a `synthetic` block".into()))?;
    prepare_out(cfg)?;
    let ds = generate_synthetic(s)?;
    let dir = cfg.path(&["data"]);
    let paths = ds.write_to(&dir)?;
    let mut files = vec![paths.gene_microbe, paths.gene_disease, paths.microbe_disease];
    files.extend([paths.gene_features, paths.microbe_features, paths.disease_features].into_iter().flatten());
    let files = files
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(io_err(p))?;
            Ok((p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(), sha256_hex(&bytes)))
        })
        .collect::<Result<Vec<_>>>()?;
    let g = &ds.graph;
    let manifest = SynthManifest {
        config: s.clone(),
        sizes: g.sizes(),
        bias: ds.bias,
        density: ds.density,
        edges: [Relation::GeneMicrobe, Relation::GeneDisease, Relation::MicrobeDisease].map(|r| g.edge_count(r)),
        triangles: derive_positive_triplets(g).len(),
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    info!("wrote {} ({} triangles, density {:.4})", dir.display(), manifest.triangles, manifest.density);
    Ok(manifest)
}

/// Cross-validation; writes `metrics/cv.json` (fold records then the mean)
/// and one checkpoint per fold.
pub fn cmd_cv(cfg: &RunConfig) -> Result<Vec<MetricsRecord>> {
    prepare_out(cfg)?;
    let g = load_graph(cfg)?;
    let plan = plan_split(cfg, &g)?;
    let model = Model::new(&g, &cfg.model)?;
    let report = run_cv(&g, &model, &plan, &cfg.train)?;
    for f in &report.folds {
        f.report.params.save(&cfg.path(&["checkpoints", &format!("fold{}.json", f.fold)]))?;
    }
    let records = report.records();
    write_json(&cfg.path(&["metrics", "cv.json"]), &records)?;
    Ok(records)
}

#[derive(Clone, Debug)]
pub struct TestOutcome {
    pub record: MetricsRecord,
    pub silhouette: Option<f64>,
    pub split_digest: String,
}

fn test_record(m: &RankMetrics, epochs: usize, best: usize) -> MetricsRecord {
    MetricsRecord::new(FoldLabel::Name("test".into()), m, epochs as f64, best as f64)
}

/// Fits on fold `test_fold`'s training part and evaluates on the held-out test set.
/// Writes `metrics/test.json`, `checkpoints/test.json`, per-positive ranks and
/// the triplet embeddings of every ranked candidate.
pub fn cmd_test(cfg: &RunConfig) -> Result<TestOutcome> {
    prepare_out(cfg)?;
    let g = load_graph(cfg)?;
    let plan = plan_split(cfg, &g)?;
    let model = Model::new(&g, &cfg.model)?;
    let fitted = fit(&g, &model, &plan, cfg.test_fold, &cfg.train)?;
    fitted.params.save(&cfg.path(&["checkpoints", "test.json"]))?;
    let test = run_test(&g, &model, &plan, &fitted.params, &cfg.train, derive_seed(cfg.seed, "test"))?;
    let record = test_record(&test.metrics, fitted.epochs, fitted.best_epoch);
    write_json(&cfg.path(&["metrics", "test.json"]), &[&record])?;

    let mut ranks = String::from("triplet\trank\tavg_degree\n");
    for c in &test.cases {
        let _ = writeln!(ranks, "{}\t{}\t{}", g.triplet_id(&c.positive), c.rank, avg_node_degree(&g, &c.positive));
    }
    write_file(&cfg.path(&["exports", "test_ranks.tsv"]), &ranks)?;

    let silhouette = export_test_embeddings(cfg, &g, &model, &fitted.params, &plan)?;
    if let Some(s) = silhouette {
        write_json(&cfg.path(&["metrics", "silhouette.json"]), &serde_json::json!({ "silhouette": s }))?;
    }
    Ok(TestOutcome { record, silhouette, split_digest: plan.digest() })
}

/// Test positives and an equal number of seeded negatives, exported as
/// triplet embeddings; returns their silhouette.
fn export_test_embeddings(cfg: &RunConfig, g: &HetGraph, model: &Model, params: &ModelParams, plan: &SplitPlan) -> Result<Option<f64>> {
    let known = positives(g).into_iter().collect();
    let negs = crate::hetgraph::sample_training_negatives(&plan.test, &known, g.sizes(), derive_seed(cfg.seed, "export"))?;
    let samples: Vec<LabeledTriplet> = plan.test.iter().map(|&t| LabeledTriplet::positive(t)).chain(negs).collect();
    let triplets: Vec<Triplet> = samples.iter().map(|s| s.triplet).collect();
    let labels: Vec<u8> = samples.iter().map(LabeledTriplet::label).collect();
    let out = model.evaluate(params, &triplets)?;
    let mut tape = crate::numerics::Tape::new();
    let z = out.z.clone().map(|m| tape.constant(m));
    let x = model.triplet_features(&mut tape, z, &triplets)?;
    let x = tape.value(x).clone();
    let ids: Vec<String> = triplets.iter().map(|t| g.triplet_id(t)).collect();
    export_embeddings(&cfg.path(&["exports", "test_embeddings.tsv"]), &ids, &labels, &x)?;
    match silhouette(&x, &labels) {
        Ok(s) => Ok(Some(s)),
        Err(e) => {
            warn!("silhouette skipped: {e}");
            Ok(None)
        }
    }
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub split_hash: String,
    #[serde(flatten)]
    pub record: Option<MetricsRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Independent-test metrics of the full model and all six ablations on one split.
/// A failing variant yields a row with `error` set. Writes `metrics/ablation.{json,tsv}`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    prepare_out(cfg)?;
    let g = load_graph(cfg)?;
    let plan = plan_split(cfg, &g)?;
    let hash = plan.digest();
    let test_seed = derive_seed(cfg.seed, "test");
    let rows: Vec<AblationRow> = Variant::ALL
        .par_iter()
        .map(|&variant| {
            let run = || -> Result<MetricsRecord> {
                let model = Model::new(&g, &ModelConfig { variant, ..cfg.model.clone() })?;
                let fitted = fit(&g, &model, &plan, cfg.test_fold, &cfg.train)?;
                fitted.params.save(&cfg.path(&["checkpoints", &format!("ablate-{variant}.json")]))?;
                let test = run_test(&g, &model, &plan, &fitted.params, &cfg.train, test_seed)?;
                Ok(test_record(&test.metrics, fitted.epochs, fitted.best_epoch))
            };
            match run() {
                Ok(r) => {
                    info!("{variant}: mrr {:.4}", r.mrr);
                    AblationRow { variant, split_hash: hash.clone(), record: Some(r), error: None }
                }
                Err(e) => {
                    warn!("{variant} failed: {e}");
                    AblationRow { variant, split_hash: hash.clone(), record: None, error: Some(e.to_string()) }
                }
            }
        })
        .collect();
    write_json(&cfg.path(&["metrics", "ablation.json"]), &rows)?;
    let mut tsv = String::from("variant\tsplit_hash\thit1\thit3\thit5\tndcg1\tndcg3\tndcg5\tmrr\n");
    for r in &rows {
        match &r.record {
            Some(m) => {
                let _ = writeln!(tsv, "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}", r.variant, r.split_hash, m.hit1, m.hit3, m.hit5, m.ndcg1, m.ndcg3, m.ndcg5, m.mrr);
            }
            None => {
                let _ = writeln!(tsv, "{}\t{}\tNA\tNA\tNA\tNA\tNA\tNA\tNA", r.variant, r.split_hash);
            }
        }
    }
    write_file(&cfg.path(&["metrics", "ablation.tsv"]), &tsv)?;
    Ok(rows)
}

/// Degree-stratified test Hit@1 for a saved checkpoint; writes `exports/strata.tsv`.
pub fn cmd_stratify(cfg: &RunConfig, checkpoint: &Path) -> Result<Vec<StratumReport>> {
    prepare_out(cfg)?;
    let g = load_graph(cfg)?;
    let plan = plan_split(cfg, &g)?;
    let params = ModelParams::load(checkpoint)?;
    let model = Model::new(&g, &cfg.model)?;
    let test = run_test(&g, &model, &plan, &params, &cfg.train, derive_seed(cfg.seed, "test"))?;
    let thresholds = match &cfg.strata.thresholds {
        Some(t) => t.clone(),
        None => {
            let degrees: Vec<f64> = test.cases.iter().map(|c| avg_node_degree(&g, &c.positive)).collect();
            default_thresholds(&degrees, cfg.strata.count)
        }
    };
    let strata = stratify_by_degree(&test.cases, &g, &thresholds)?;
    write_strata(&cfg.path(&["exports", "strata.tsv"]), &strata)?;
    Ok(strata)
}
