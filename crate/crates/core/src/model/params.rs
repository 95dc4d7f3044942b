use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, Result, Variant};
use crate::hetgraph::{EntityType, Relation};
use crate::metapath::metapaths;
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Glorot,
    Zero,
    /// Relation vectors start near 1 so the Hadamard chain neither vanishes nor flips sign.
    NearOne,
}

/// Name and shape of one learnable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    init: Init,
}

fn spec(name: impl Into<String>, rows: usize, cols: usize, init: Init) -> ParamSpec {
    ParamSpec { name: name.into(), rows, cols, init }
}

/// Parameter layout for a config and per-type input feature widths.
///
/// `proj.X` holds the transposed projection (F_X × F′) so that H = X·proj.
/// Fusion weights are stored transposed the same way (K·F′ × d_a).
pub fn layout(cfg: &ModelConfig, feature_dims: [usize; 3]) -> Vec<ParamSpec> {
    let (f, k, e) = (cfg.hidden_dim, cfg.heads, cfg.embed_dim());
    let mut out = Vec::new();
    for t in EntityType::ALL {
        out.push(spec(format!("proj.{t}"), feature_dims[t.index()], f, Init::Glorot));
    }
    if cfg.variant != Variant::WoMpI {
        for r in Relation::ALL {
            out.push(spec(format!("rel.{}", r.label()), 1, f, Init::NearOne));
        }
    }
    for p in metapaths(cfg.variant.metapath_kind()) {
        out.push(spec(format!("attn.{p}.self"), f, k, Init::Glorot));
        out.push(spec(format!("attn.{p}.msg"), f, k, Init::Glorot));
    }
    if cfg.variant != Variant::WoAf {
        for t in EntityType::ALL {
            out.push(spec(format!("fuse.{t}.w"), e, cfg.fusion_dim, Init::Glorot));
            out.push(spec(format!("fuse.{t}.b"), 1, cfg.fusion_dim, Init::Zero));
            out.push(spec(format!("fuse.{t}.q"), cfg.fusion_dim, 1, Init::Glorot));
        }
    }
    out.push(spec("mlp.w1", 3 * e, cfg.mlp_hidden, Init::Glorot));
    out.push(spec("mlp.b1", 1, cfg.mlp_hidden, Init::Zero));
    out.push(spec("mlp.w2", cfg.mlp_hidden, 1, Init::Glorot));
    out.push(spec("mlp.b2", 1, 1, Init::Zero));
    out
}

/// All learnable tensors of one model, in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub feature_dims: [usize; 3],
    names: Vec<String>,
    values: Vec<Matrix>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, feature_dims: [usize; 3], seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = layout(config, feature_dims);
        let values = specs
            .iter()
            .map(|s| {
                let mut m = Matrix::zeros(s.rows, s.cols);
                match s.init {
                    Init::Zero => {}
                    Init::Glorot => {
                        let a = (6.0 / (s.rows + s.cols) as f64).sqrt();
                        m.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-a..a));
                    }
                    Init::NearOne => m.data_mut().iter_mut().for_each(|x| *x = rng.random_range(0.5..1.5)),
                }
                m
            })
            .collect();
        Ok(Self::assemble(config.clone(), feature_dims, specs.into_iter().map(|s| s.name).collect(), values))
    }

    fn assemble(config: ModelConfig, feature_dims: [usize; 3], names: Vec<String>, values: Vec<Matrix>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { config, feature_dims, names, values, index }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.index_of(name).map(move |i| &mut self.values[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            feature_dims: self.feature_dims,
            tensors: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(n, m)| NamedTensor { name: n.clone(), rows: m.rows(), cols: m.cols(), data: m.data().to_vec() })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Mismatch(format!("checkpoint format `{}`", ck.format)));
        }
        ck.config.validate()?;
        let specs = layout(&ck.config, ck.feature_dims);
        if specs.len() != ck.tensors.len() {
            return Err(ModelError::Mismatch(format!("expected {} tensors, checkpoint has {}", specs.len(), ck.tensors.len())));
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut values = Vec::with_capacity(specs.len());
        for (s, t) in specs.iter().zip(ck.tensors) {
            if s.name != t.name || s.rows != t.rows || s.cols != t.cols {
                return Err(ModelError::Mismatch(format!(
                    "tensor `{}` {}x{} where `{}` {}x{} was expected",
                    t.name, t.rows, t.cols, s.name, s.rows, s.cols
                )));
            }
            values.push(Matrix::from_vec(t.rows, t.cols, t.data)?);
            names.push(t.name);
        }
        Ok(Self::assemble(ck.config, ck.feature_dims, names, values))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string(&self.to_checkpoint())?;
        fs::write(path, body).map_err(|e| ModelError::Io { path: path.to_path_buf(), source: e })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| ModelError::Io { path: path.to_path_buf(), source: e })?;
        Self::from_checkpoint(serde_json::from_str(&body)?)
    }
}

const CHECKPOINT_FORMAT: &str = "hcmgnn-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Serialized parameters plus the config that shapes them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    format: String,
    pub config: ModelConfig,
    pub feature_dims: [usize; 3],
    tensors: Vec<NamedTensor>,
}
