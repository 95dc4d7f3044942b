use std::collections::HashMap;
use std::sync::Arc;

use super::params::layout;
use super::{ModelConfig, ModelError, ModelParams, Result, Variant};
use crate::hetgraph::{EntityType, HetGraph, Triplet};
use crate::metapath::{InstanceCache, InstanceTable};
use crate::numerics::{Matrix, Segments, Tape, Tensor};

/// Message rows routed to the nodes of one type: `rows[r]` goes to `targets[r]`.
#[derive(Debug)]
struct Delivery {
    segments: Arc<Segments>,
    targets: Arc<Vec<usize>>,
    rows: Arc<Vec<usize>>,
}

#[derive(Debug)]
enum Messages {
    /// Fold over the instance positions with relation vectors.
    Encode { types: Vec<EntityType>, relations: Vec<usize>, flat: Arc<Vec<usize>> },
    /// Projected tail embeddings, one row per distinct (head, tail).
    Tail { tail: EntityType, tails: Arc<Vec<usize>> },
}

#[derive(Debug)]
struct RoutedPath {
    name: String,
    messages: Messages,
    /// Types that receive a view from this path; `None` deliveries mean no rows.
    routed: [bool; 3],
    deliveries: [Option<Delivery>; 3],
    attn_self: usize,
    attn_msg: usize,
}

/// Graph-side state of one model: features, routed instance tables, parameter layout.
#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    features: [Matrix; 3],
    feature_dims: [usize; 3],
    sizes: [usize; 3],
    paths: Vec<RoutedPath>,
    param_names: Vec<String>,
    index: HashMap<String, usize>,
}

/// Tape handles of one forward pass.
#[derive(Debug)]
pub struct ForwardTensors {
    pub projected: [Tensor; 3],
    /// Per type, `(path index, view)` in path order.
    pub views: [Vec<(usize, Tensor)>; 3],
    /// Per type, 1×P fusion weights (absent for the mean-fusion variant).
    pub beta: [Option<Tensor>; 3],
    /// `(path index, type, α, segments)`; α has one column per head.
    pub alphas: Vec<(usize, EntityType, Tensor, Arc<Segments>)>,
    pub z: [Tensor; 3],
    pub scores: Tensor,
}

/// Plain values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub z: [Matrix; 3],
    pub views: [Vec<(usize, Matrix)>; 3],
    pub beta: [Vec<f64>; 3],
    pub alphas: Vec<(usize, EntityType, Matrix, Arc<Segments>)>,
    pub scores: Vec<f64>,
}

fn routed_positions(variant: Variant, len: usize) -> Vec<usize> {
    match variant {
        Variant::WoMpII | Variant::WoMpIII => vec![0, len - 1],
        Variant::WoMpI => vec![0],
        _ => (0..len).collect(),
    }
}

fn delivery(mut pairs: Vec<(usize, usize)>, n_out: usize) -> Result<Option<Delivery>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    pairs.sort_unstable();
    let targets: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let rows: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let segments = Segments::from_sorted_keys(&targets, n_out)?;
    Ok(Some(Delivery { segments: Arc::new(segments), targets: Arc::new(targets), rows: Arc::new(rows) }))
}

impl Model {
    /// Enumerates the variant's metapath family and routes it.
    pub fn new(graph: &HetGraph, config: &ModelConfig) -> Result<Self> {
        let cache = InstanceCache::build(graph, config.variant.metapath_kind())?;
        Self::with_cache(graph, &cache, config)
    }

    pub fn with_cache(graph: &HetGraph, cache: &InstanceCache, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        if cache.kind() != config.variant.metapath_kind() {
            return Err(ModelError::Mismatch(format!("variant {} needs {:?} instances, got {:?}", config.variant, config.variant.metapath_kind(), cache.kind())));
        }
        if cache.tables().first().is_some_and(|t| t.sizes() != graph.sizes()) {
            return Err(ModelError::Mismatch("instance tables were built for a different graph".into()));
        }
        let features = match config.variant {
            Variant::WoBf => EntityType::ALL.map(|t| Matrix::identity(graph.node_count(t))),
            _ => EntityType::ALL.map(|t| graph.features(t).clone()),
        };
        let feature_dims = features.clone().map(|m| m.cols());
        let param_names: Vec<String> = layout(config, feature_dims).into_iter().map(|s| s.name).collect();
        let index: HashMap<String, usize> = param_names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let sizes = graph.sizes();
        let paths = cache.tables().iter().map(|t| Self::route(config.variant, t, sizes, &index)).collect::<Result<Vec<_>>>()?;
        Ok(Self { config: config.clone(), features, feature_dims, sizes, paths, param_names, index })
    }

    fn route(variant: Variant, table: &InstanceTable, sizes: [usize; 3], index: &HashMap<String, usize>) -> Result<RoutedPath> {
        let p = table.metapath();
        let types = p.types().to_vec();
        let name = p.name();
        let positions = routed_positions(variant, types.len());
        let mut routed = [false; 3];
        for &k in &positions {
            routed[types[k].index()] = true;
        }
        let mut pairs: [Vec<(usize, usize)>; 3] = Default::default();
        let messages = if variant == Variant::WoMpI {
            let tail = *types.last().expect("non-empty metapath");
            let mut ht: Vec<(usize, usize)> = table.iter().map(|x| (x[0], x[x.len() - 1])).collect();
            ht.sort_unstable();
            ht.dedup();
            for (row, &(h, _)) in ht.iter().enumerate() {
                pairs[types[0].index()].push((h, row));
            }
            Messages::Tail { tail, tails: Arc::new(ht.into_iter().map(|(_, t)| t).collect()) }
        } else {
            for (row, inst) in table.iter().enumerate() {
                for &k in &positions {
                    pairs[types[k].index()].push((inst[k], row));
                }
            }
            let relations = p.relations().iter().map(|r| index[&format!("rel.{}", r.label())]).collect();
            Messages::Encode { types: types.clone(), relations, flat: Arc::new(table.flat().to_vec()) }
        };
        let mut deliveries: [Option<Delivery>; 3] = Default::default();
        for t in EntityType::ALL {
            deliveries[t.index()] = delivery(std::mem::take(&mut pairs[t.index()]), sizes[t.index()])?;
        }
        Ok(RoutedPath {
            attn_self: index[&format!("attn.{name}.self")],
            attn_msg: index[&format!("attn.{name}.msg")],
            name,
            messages,
            routed,
            deliveries,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn feature_dims(&self) -> [usize; 3] {
        self.feature_dims
    }

    pub fn sizes(&self) -> [usize; 3] {
        self.sizes
    }

    pub fn path_names(&self) -> Vec<&str> {
        self.paths.iter().map(|p| p.name.as_str()).collect()
    }

    /// Fresh parameters matching this model's layout.
    pub fn init_params(&self, seed: u64) -> Result<ModelParams> {
        ModelParams::init(&self.config, self.feature_dims, seed)
    }

    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.config != self.config || params.feature_dims != self.feature_dims || params.names() != self.param_names.as_slice() {
            return Err(ModelError::Mismatch(format!(
                "parameters for {} with feature dims {:?} do not fit model {} with {:?}",
                params.config.variant, params.feature_dims, self.config.variant, self.feature_dims
            )));
        }
        Ok(())
    }

    /// Records parameters on `tape`, as gradient leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, params: &ModelParams, trainable: bool) -> Result<Vec<Tensor>> {
        self.check_params(params)?;
        Ok(params.values().iter().map(|m| tape.leaf(m.clone(), trainable)).collect())
    }

    fn p(&self, params: &[Tensor], name: &str) -> Tensor {
        params[self.index[name]]
    }

    fn check_samples(&self, samples: &[Triplet]) -> Result<()> {
        for s in samples {
            for t in EntityType::ALL {
                if s.get(t) >= self.sizes[t.index()] {
                    return Err(ModelError::Mismatch(format!("sample {s:?} references an unknown {}", t.name())));
                }
            }
        }
        Ok(())
    }

    /// Node embeddings Z and scores for `samples`, recorded on `tape`.
    pub fn forward(&self, tape: &mut Tape, params: &[Tensor], samples: &[Triplet]) -> Result<ForwardTensors> {
        if params.len() != self.param_names.len() {
            return Err(ModelError::Mismatch(format!("{} parameter tensors for a layout of {}", params.len(), self.param_names.len())));
        }
        self.check_samples(samples)?;
        let cfg = &self.config;
        let (f, heads) = (cfg.hidden_dim, cfg.heads);

        let mut projected = Vec::with_capacity(3);
        for t in EntityType::ALL {
            let x = tape.constant(self.features[t.index()].clone());
            projected.push(tape.matmul(x, self.p(params, &format!("proj.{t}")))?);
        }
        let h: [Tensor; 3] = [projected[0], projected[1], projected[2]];

        let mut views: [Vec<(usize, Tensor)>; 3] = Default::default();
        let mut alphas = Vec::new();
        for (pi, path) in self.paths.iter().enumerate() {
            let m = match &path.messages {
                Messages::Encode { types, relations, flat } => {
                    let nodes: Vec<Tensor> = types.iter().map(|t| h[t.index()]).collect();
                    let rels: Vec<Tensor> = relations.iter().map(|&i| params[i]).collect();
                    tape.path_encode(&nodes, &rels, flat)?
                }
                Messages::Tail { tail, tails } => tape.gather_rows(h[tail.index()], tails)?,
            };
            let right = tape.matmul(m, params[path.attn_msg])?;
            for t in EntityType::ALL {
                if !path.routed[t.index()] {
                    continue;
                }
                let Some(d) = &path.deliveries[t.index()] else {
                    let zero = tape.constant(Matrix::zeros(self.sizes[t.index()], heads * f));
                    views[t.index()].push((pi, zero));
                    continue;
                };
                let left = tape.matmul(h[t.index()], params[path.attn_self])?;
                let lg = tape.gather_rows(left, &d.targets)?;
                let rg = tape.gather_rows(right, &d.rows)?;
                let raw = tape.add(lg, rg)?;
                let logits = tape.leaky_relu(raw, cfg.leaky_slope);
                let alpha = tape.segment_softmax(logits, &d.segments)?;
                let mut per_head = Vec::with_capacity(heads);
                for k in 0..heads {
                    let w = tape.slice_cols(alpha, k, k + 1)?;
                    let agg = tape.segment_weighted_sum(m, &d.rows, w, &d.segments)?;
                    per_head.push(tape.elu(agg));
                }
                let view = if heads == 1 { per_head[0] } else { tape.concat_cols(&per_head)? };
                views[t.index()].push((pi, view));
                alphas.push((pi, t, alpha, Arc::clone(&d.segments)));
            }
        }

        let mut z = Vec::with_capacity(3);
        let mut beta: [Option<Tensor>; 3] = [None, None, None];
        for t in EntityType::ALL {
            let vs = &views[t.index()];
            let n_views = vs.len();
            if n_views == 0 {
                return Err(ModelError::Mismatch(format!("no metapath view reaches {} nodes", t.name())));
            }
            let mut acc: Option<Tensor> = None;
            if cfg.variant == Variant::WoAf {
                for &(_, v) in vs {
                    let part = tape.scale(v, 1.0 / n_views as f64);
                    acc = Some(match acc {
                        None => part,
                        Some(a) => tape.add(a, part)?,
                    });
                }
            } else {
                let (w, b, q) =
                    (self.p(params, &format!("fuse.{t}.w")), self.p(params, &format!("fuse.{t}.b")), self.p(params, &format!("fuse.{t}.q")));
                let mut e = Vec::with_capacity(n_views);
                for &(_, v) in vs {
                    let lin = tape.matmul(v, w)?;
                    let shifted = tape.add_row(lin, b)?;
                    let act = tape.tanh(shifted);
                    let mean = tape.mean_rows(act)?;
                    e.push(tape.matmul(mean, q)?);
                }
                let e = tape.concat_cols(&e)?;
                let bt = tape.row_softmax(e)?;
                for (p, &(_, v)) in vs.iter().enumerate() {
                    let bp = tape.slice_cols(bt, p, p + 1)?;
                    let part = tape.scale_by(v, bp)?;
                    acc = Some(match acc {
                        None => part,
                        Some(a) => tape.add(a, part)?,
                    });
                }
                beta[t.index()] = Some(bt);
            }
            z.push(acc.expect("at least one view"));
        }
        let z = [z[0], z[1], z[2]];
        let scores = self.score_on(tape, params, z, samples)?;
        Ok(ForwardTensors { projected: h, views, beta, alphas, z, scores })
    }

    /// `[z_g ‖ z_m ‖ z_d]` rows for `samples`.
    pub fn triplet_features(&self, tape: &mut Tape, z: [Tensor; 3], samples: &[Triplet]) -> Result<Tensor> {
        let mut parts = Vec::with_capacity(3);
        for t in EntityType::ALL {
            let idx = Arc::new(samples.iter().map(|s| s.get(t)).collect::<Vec<_>>());
            parts.push(tape.gather_rows(z[t.index()], &idx)?);
        }
        Ok(tape.concat_cols(&parts)?)
    }

    fn score_on(&self, tape: &mut Tape, params: &[Tensor], z: [Tensor; 3], samples: &[Triplet]) -> Result<Tensor> {
        let x = self.triplet_features(tape, z, samples)?;
        let a = tape.matmul(x, self.p(params, "mlp.w1"))?;
        let a = tape.add_row(a, self.p(params, "mlp.b1"))?;
        let hidden = tape.elu(a);
        let o = tape.matmul(hidden, self.p(params, "mlp.w2"))?;
        let logit = tape.add_row(o, self.p(params, "mlp.b2"))?;
        Ok(tape.sigmoid(logit))
    }

    /// Scores `samples` from precomputed node embeddings, off any training tape.
    pub fn score_embeddings(&self, params: &ModelParams, z: &[Matrix; 3], samples: &[Triplet]) -> Result<Vec<f64>> {
        self.check_samples(samples)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, params, false)?;
        let zt = [0, 1, 2].map(|i| tape.constant(z[i].clone()));
        let s = self.score_on(&mut tape, &bound, zt, samples)?;
        Ok(tape.value(s).data().to_vec())
    }

    /// Forward pass without gradients, returning plain values.
    pub fn evaluate(&self, params: &ModelParams, samples: &[Triplet]) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, params, false)?;
        let out = self.forward(&mut tape, &bound, samples)?;
        let val = |t: Tensor| tape.value(t).clone();
        Ok(ForwardOutput {
            z: out.z.map(val),
            views: out.views.each_ref().map(|vs| vs.iter().map(|&(p, v)| (p, val(v))).collect()),
            beta: out.beta.map(|b| b.map(|b| tape.value(b).data().to_vec()).unwrap_or_default()),
            alphas: out.alphas.into_iter().map(|(p, t, a, s)| (p, t, val(a), s)).collect(),
            scores: tape.value(out.scores).data().to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::HetGraphBuilder;

    fn toy() -> HetGraph {
        let mut b = HetGraphBuilder::new();
        for (a, c) in [("G1", "M1"), ("G1", "D1"), ("M1", "D1"), ("G2", "M1"), ("G2", "D2"), ("M2", "D2"), ("G1", "M2")] {
            let ta = EntityType::from_letter(a.chars().next().unwrap()).unwrap();
            let tc = EntityType::from_letter(c.chars().next().unwrap()).unwrap();
            b.add_association(ta, a, tc, c).unwrap();
        }
        b.build().0
    }

    fn cfg(variant: Variant) -> ModelConfig {
        ModelConfig { hidden_dim: 3, heads: 2, fusion_dim: 4, mlp_hidden: 3, variant, ..Default::default() }
    }

    #[test]
    fn every_variant_scores_in_unit_interval() {
        let g = toy();
        let samples = [Triplet::new(0, 0, 0), Triplet::new(1, 1, 1), Triplet::new(1, 0, 0)];
        for v in Variant::ALL {
            let m = Model::new(&g, &cfg(v)).unwrap();
            let p = m.init_params(3).unwrap();
            let out = m.evaluate(&p, &samples).unwrap();
            assert_eq!(out.scores.len(), 3);
            assert!(out.scores.iter().all(|&s| s > 0.0 && s < 1.0), "{v}");
            for t in EntityType::ALL {
                assert_eq!(out.z[t.index()].shape(), (g.node_count(t), 6));
                if v != Variant::WoAf {
                    assert!((out.beta[t.index()].iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_mlp_gives_half() {
        let g = toy();
        let m = Model::new(&g, &cfg(Variant::Full)).unwrap();
        let mut p = m.init_params(3).unwrap();
        for n in ["mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2"] {
            p.get_mut(n).unwrap().data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let out = m.evaluate(&p, &[Triplet::new(0, 0, 0), Triplet::new(1, 1, 1)]).unwrap();
        assert_eq!(out.scores, vec![0.5, 0.5]);
    }

    #[test]
    fn view_counts_follow_routing() {
        let g = toy();
        let count = |v: Variant| {
            let m = Model::new(&g, &cfg(v)).unwrap();
            let out = m.evaluate(&m.init_params(1).unwrap(), &[]).unwrap();
            out.views.map(|vs| vs.len())
        };
        assert_eq!(count(Variant::Full), [6, 6, 6]);
        assert_eq!(count(Variant::WoMpII), [4, 4, 4]);
        assert_eq!(count(Variant::WoMpIII), [2, 2, 2]);
        assert_eq!(count(Variant::WoTm), [4, 4, 4]);
        assert_eq!(count(Variant::WoMpI), [2, 2, 2]);
    }

    #[test]
    fn foreign_params_rejected() {
        let g = toy();
        let m = Model::new(&g, &cfg(Variant::Full)).unwrap();
        let other = Model::new(&g, &cfg(Variant::WoTm)).unwrap();
        assert!(m.evaluate(&other.init_params(1).unwrap(), &[]).is_err());
        assert!(m.evaluate(&m.init_params(1).unwrap(), &[Triplet::new(9, 0, 0)]).is_err());
    }
}
