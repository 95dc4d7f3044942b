//! Weighted squared loss, full-batch training with early stopping on
//! validation MRR, cross-validation and independent-test evaluation.

use std::collections::HashSet;
use std::time::Instant;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::{rank_metrics, EvalError, RankMetrics, RankedCase};
use crate::hetgraph::{derive_positive_triplets, sample_negatives, sample_training_negatives, HetGraph, HetGraphError, LabeledTriplet, SplitPlan, Triplet};
use crate::model::{Model, ModelError, ModelParams};
use crate::numerics::{Adam, AdamConfig, Matrix, NumericsError, Tape, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] HetGraphError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("training set is empty")]
    EmptyTraining,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("leakage: {count} test positives appear in training data, e.g. {example}")]
    Leakage { count: usize, example: String },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Sub-seed for a labelled purpose: first 8 bytes (little endian) of
/// SHA-256 over the seed's little-endian bytes followed by the label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the negative-sample term; positives get 1 − γ.
    pub gamma: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Only "mrr" is supported.
    pub validation_metric: String,
    /// Negatives ranked against each validation or test positive.
    pub eval_negatives: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { gamma: 0.7, learning_rate: 0.005, max_epochs: 1000, patience: 50, validation_metric: "mrr".into(), eval_negatives: 30, seed: 7 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(TrainError::InvalidConfig(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.patience == 0 || self.max_epochs == 0 || self.eval_negatives == 0 {
            return Err(TrainError::InvalidConfig("patience, max_epochs and eval_negatives must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        if !self.validation_metric.eq_ignore_ascii_case("mrr") {
            return Err(TrainError::InvalidConfig(format!("validation metric `{}` (only mrr)", self.validation_metric)));
        }
        Ok(())
    }
}

fn loss_weights(labels: &[u8], gamma: f64) -> (Matrix, Matrix) {
    let y = Matrix::col_vector(&labels.iter().map(|&l| f64::from(l)).collect::<Vec<_>>());
    let w = Matrix::col_vector(&labels.iter().map(|&l| if l == 1 { 1.0 - gamma } else { gamma }).collect::<Vec<_>>());
    (y, w)
}

/// `(1−γ)·Σ_pos (y−ŷ)² + γ·Σ_neg (y−ŷ)²` on the tape.
pub fn loss(tape: &mut Tape, scores: Tensor, labels: &[u8], gamma: f64) -> Result<Tensor> {
    if scores.shape() != (labels.len(), 1) {
        return Err(NumericsError::shape("loss", scores.shape(), (labels.len(), 1)).into());
    }
    let (y, w) = loss_weights(labels, gamma);
    let (y, w) = (tape.constant(y), tape.constant(w));
    let d = tape.sub(scores, y)?;
    let sq = tape.hadamard(d, d)?;
    let weighted = tape.hadamard(sq, w)?;
    Ok(tape.sum(weighted))
}

/// Plain evaluation of [`loss`].
pub fn loss_value(scores: &[f64], labels: &[u8], gamma: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(NumericsError::shape("loss", (scores.len(), 1), (labels.len(), 1)).into());
    }
    Ok(scores
        .iter()
        .zip(labels)
        .map(|(&s, &l)| {
            let d = f64::from(l) - s;
            (if l == 1 { 1.0 - gamma } else { gamma }) * d * d
        })
        .sum())
}

/// Positives each paired with fixed negatives and a fixed candidate-id order.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingSet {
    positives: Vec<Triplet>,
    negatives: Vec<Vec<Triplet>>,
    candidate_ids: Vec<Vec<usize>>,
}

impl RankingSet {
    pub fn build(positives: &[Triplet], known: &HashSet<Triplet>, universe: [usize; 3], negatives: usize, seed: u64) -> Result<Self> {
        if positives.is_empty() {
            return Err(TrainError::EmptyValidation);
        }
        let groups = sample_negatives(positives, known, universe, negatives, derive_seed(seed, "negatives"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "candidate-order"));
        let mut candidate_ids = Vec::with_capacity(positives.len());
        for _ in positives {
            let mut ids: Vec<usize> = (0..=negatives).collect();
            rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), &mut rng);
            candidate_ids.push(ids);
        }
        Ok(Self {
            positives: positives.to_vec(),
            negatives: groups.into_iter().map(|g| g.into_iter().map(|n| n.triplet).collect()).collect(),
            candidate_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn positives(&self) -> &[Triplet] {
        &self.positives
    }

    pub fn negatives(&self) -> &[Vec<Triplet>] {
        &self.negatives
    }

    /// Every candidate, grouped per positive (positive first).
    pub fn flat(&self) -> Vec<Triplet> {
        self.positives.iter().zip(&self.negatives).flat_map(|(p, ns)| std::iter::once(*p).chain(ns.iter().copied())).collect()
    }

    /// Cases from scores laid out as in [`RankingSet::flat`].
    pub fn rank(&self, scores: &[f64]) -> Vec<RankedCase> {
        let mut offset = 0;
        self.positives
            .iter()
            .zip(&self.negatives)
            .zip(&self.candidate_ids)
            .map(|((p, ns), ids)| {
                let n = ns.len() + 1;
                let case = RankedCase::new(*p, scores[offset..offset + n].to_vec(), ids.clone());
                offset += n;
                case
            })
            .collect()
    }

    pub fn evaluate(&self, model: &Model, params: &ModelParams) -> Result<Vec<RankedCase>> {
        let out = model.evaluate(params, &self.flat())?;
        Ok(self.rank(&out.scores))
    }

    fn evaluate_with_embeddings(&self, model: &Model, params: &ModelParams, z: &[Matrix; 3]) -> Result<Vec<RankedCase>> {
        let scores = model.score_embeddings(params, z, &self.flat())?;
        Ok(self.rank(&scores))
    }
}

/// Training samples and validation ranking set of one fold.
#[derive(Clone, Debug)]
pub struct FoldData {
    pub train: Vec<LabeledTriplet>,
    pub validation: RankingSet,
}

impl FoldData {
    /// Train positives plus one fixed negative each; validation positives with
    /// `cfg.eval_negatives` negatives each.
    pub fn build(
        train_pos: &[Triplet],
        validation_pos: &[Triplet],
        known: &HashSet<Triplet>,
        universe: [usize; 3],
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        if train_pos.is_empty() {
            return Err(TrainError::EmptyTraining);
        }
        let negs = sample_training_negatives(train_pos, known, universe, derive_seed(seed, "train-negatives"))?;
        let mut train: Vec<LabeledTriplet> = train_pos.iter().map(|&t| LabeledTriplet::positive(t)).collect();
        train.extend(negs);
        let validation = RankingSet::build(validation_pos, known, universe, cfg.eval_negatives, derive_seed(seed, "validation"))?;
        Ok(Self { train, validation })
    }
}

/// Tracks the best validation score and counts epochs without improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::NEG_INFINITY, best_epoch: 0, stale: 0 }
    }

    /// Records `metric` for `epoch`; returns whether it is a new strict best.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        if metric > self.best {
            (self.best, self.best_epoch, self.stale) = (metric, epoch, 0);
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> (f64, usize) {
        (self.best, self.best_epoch)
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// Validation MRR measured with the parameters that produced `losses[i]`.
    pub val_mrr: Vec<f64>,
    pub epochs: usize,
    /// 1-based epoch whose parameters are returned.
    pub best_epoch: usize,
    pub best_mrr: f64,
    pub seconds: f64,
    pub params: ModelParams,
}

/// Full-batch Adam. Each epoch runs one forward at the current parameters,
/// records training loss and validation MRR for those parameters, then updates.
/// Stops after `patience` epochs without a strictly better MRR.
pub fn train(model: &Model, data: &FoldData, cfg: &TrainConfig, init_seed: u64) -> Result<TrainReport> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::EmptyTraining);
    }
    if data.validation.is_empty() {
        return Err(TrainError::EmptyValidation);
    }
    let start = Instant::now();
    let triplets: Vec<Triplet> = data.train.iter().map(|l| l.triplet).collect();
    let labels: Vec<u8> = data.train.iter().map(LabeledTriplet::label).collect();
    let mut params = model.init_params(init_seed)?;
    let names: Vec<String> = params.names().to_vec();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut adam = Adam::new(AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() });

    let (mut losses, mut val_mrr) = (Vec::new(), Vec::new());
    let mut best = params.clone();
    let mut stop = EarlyStopping::new(cfg.patience);
    for epoch in 1..=cfg.max_epochs {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, &params, true)?;
        let out = model.forward(&mut tape, &bound, &triplets)?;
        let l = loss(&mut tape, out.scores, &labels, cfg.gamma)?;
        let lv = tape.value(l).item().expect("scalar loss");
        if !lv.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        let z = out.z.map(|t| tape.value(t).clone());
        let mrr = rank_metrics(&data.validation.evaluate_with_embeddings(model, &params, &z)?)?.mrr;
        losses.push(lv);
        val_mrr.push(mrr);
        debug!("epoch {epoch}: loss {lv:.6} val mrr {mrr:.4}");
        if stop.observe(epoch, mrr) {
            best = params.clone();
        }
        if stop.should_stop() || epoch == cfg.max_epochs {
            break;
        }
        tape.backward(l)?;
        let grads: Vec<Matrix> =
            bound.iter().zip(params.values()).map(|(&t, v)| tape.grad(t).cloned().unwrap_or_else(|| Matrix::zeros(v.rows(), v.cols()))).collect();
        adam.step(params.values_mut(), &grads, &names)?;
    }
    let (best_mrr, best_epoch) = stop.best();
    Ok(TrainReport { epochs: losses.len(), losses, val_mrr, best_epoch, best_mrr, seconds: start.elapsed().as_secs_f64(), params: best })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FoldLabel {
    Index(usize),
    Name(String),
}

/// One line of the metrics JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub fold: FoldLabel,
    pub hit1: f64,
    pub hit3: f64,
    pub hit5: f64,
    pub ndcg1: f64,
    pub ndcg3: f64,
    pub ndcg5: f64,
    pub mrr: f64,
    pub epochs: f64,
    pub best_epoch: f64,
}

impl MetricsRecord {
    pub fn new(fold: FoldLabel, m: &RankMetrics, epochs: f64, best_epoch: f64) -> Self {
        Self { fold, hit1: m.hit1, hit3: m.hit3, hit5: m.hit5, ndcg1: m.ndcg1, ndcg3: m.ndcg3, ndcg5: m.ndcg5, mrr: m.mrr, epochs, best_epoch }
    }

    pub fn metrics(&self) -> RankMetrics {
        RankMetrics { hit1: self.hit1, hit3: self.hit3, hit5: self.hit5, ndcg1: self.ndcg1, ndcg3: self.ndcg3, ndcg5: self.ndcg5, mrr: self.mrr }
    }
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    pub metrics: RankMetrics,
    pub train_size: usize,
    pub train_positives: usize,
    pub validation_cases: Vec<RankedCase>,
    pub report: TrainReport,
}

#[derive(Clone, Debug)]
pub struct CvReport {
    pub folds: Vec<FoldOutcome>,
    pub mean: RankMetrics,
    pub split_digest: String,
}

impl CvReport {
    /// Five fold records followed by the mean record.
    pub fn records(&self) -> Vec<MetricsRecord> {
        let mut out: Vec<MetricsRecord> = self
            .folds
            .iter()
            .map(|f| MetricsRecord::new(FoldLabel::Index(f.fold), &f.metrics, f.report.epochs as f64, f.report.best_epoch as f64))
            .collect();
        let n = self.folds.len() as f64;
        let epochs = self.folds.iter().map(|f| f.report.epochs as f64).sum::<f64>() / n;
        let best = self.folds.iter().map(|f| f.report.best_epoch as f64).sum::<f64>() / n;
        out.push(MetricsRecord::new(FoldLabel::Name("mean".into()), &self.mean, epochs, best));
        out
    }
}

fn all_positives(g: &HetGraph) -> HashSet<Triplet> {
    derive_positive_triplets(g).into_iter().map(|l| l.triplet).collect()
}

/// Fails if any test positive occurs in a training set (as positive or negative).
pub fn audit_leakage<'a>(plan: &SplitPlan, train_sets: impl IntoIterator<Item = &'a [LabeledTriplet]>) -> Result<()> {
    let test: HashSet<&Triplet> = plan.test.iter().collect();
    let mut hits = Vec::new();
    for set in train_sets {
        hits.extend(set.iter().filter(|l| test.contains(&l.triplet)).map(|l| l.triplet));
    }
    match hits.first() {
        None => Ok(()),
        Some(t) => Err(TrainError::Leakage { count: hits.len(), example: format!("{t:?}") }),
    }
}

/// Data for fold `k` of `plan`, with fold-specific seeds.
pub fn fold_data(g: &HetGraph, plan: &SplitPlan, k: usize, cfg: &TrainConfig) -> Result<FoldData> {
    let known = all_positives(g);
    let split = plan.fold(k);
    FoldData::build(&split.train, &split.validation, &known, g.sizes(), cfg, derive_seed(cfg.seed, &format!("fold-{k}")))
}

/// Trains and validates every fold (concurrently); audits leakage first.
pub fn run_cv(g: &HetGraph, model: &Model, plan: &SplitPlan, cfg: &TrainConfig) -> Result<CvReport> {
    cfg.validate()?;
    let data = (0..plan.folds.len()).map(|k| fold_data(g, plan, k, cfg)).collect::<Result<Vec<_>>>()?;
    audit_leakage(plan, data.iter().map(|d| d.train.as_slice()))?;
    let folds = data
        .into_par_iter()
        .enumerate()
        .map(|(k, d)| {
            let report = train(model, &d, cfg, derive_seed(cfg.seed, &format!("init-{k}")))?;
            let cases = d.validation.evaluate(model, &report.params)?;
            let metrics = rank_metrics(&cases)?;
            info!("fold {k}: mrr {:.4} hit1 {:.4} after {} epochs (best {})", metrics.mrr, metrics.hit1, report.epochs, report.best_epoch);
            let train_positives = d.train.iter().filter(|l| l.label() == 1).count();
            Ok(FoldOutcome { fold: k, metrics, train_size: d.train.len(), train_positives, validation_cases: cases, report })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = RankMetrics::mean(&folds.iter().map(|f| f.metrics).collect::<Vec<_>>())?;
    Ok(CvReport { folds, mean, split_digest: plan.digest() })
}

/// Trains on fold `k`'s training part (fold `k` validates for early stopping).
pub fn fit(g: &HetGraph, model: &Model, plan: &SplitPlan, k: usize, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if k >= plan.folds.len() {
        return Err(TrainError::InvalidConfig(format!("fold {k} of {}", plan.folds.len())));
    }
    let d = fold_data(g, plan, k, cfg)?;
    audit_leakage(plan, [d.train.as_slice()])?;
    train(model, &d, cfg, derive_seed(cfg.seed, &format!("init-{k}")))
}

#[derive(Clone, Debug)]
pub struct TestReport {
    pub metrics: RankMetrics,
    pub cases: Vec<RankedCase>,
}

/// Ranks every test positive against freshly sampled negatives.
pub fn run_test(g: &HetGraph, model: &Model, plan: &SplitPlan, params: &ModelParams, cfg: &TrainConfig, seed: u64) -> Result<TestReport> {
    model.check_params(params)?;
    let known = all_positives(g);
    let set = RankingSet::build(&plan.test, &known, g.sizes(), cfg.eval_negatives, derive_seed(seed, "test"))?;
    let cases = set.evaluate(model, params)?;
    Ok(TestReport { metrics: rank_metrics(&cases)?, cases })
}
