//! The forward computation: bipartite messages, element-wise attention
//! messages between feature nodes, union aggregation, node and edge
//! updates, and the linear readouts.
//!
//! Weights are stored input-major: a layer mapping `x` (width `i`) to `y`
//! (width `o`) holds an `i x o` matrix and computes `y = x W + b`. The rows
//! of a weight that acts on a concatenation are laid out in the order of
//! the concatenation:
//!
//! | weight        | rows                                   |
//! |---------------|----------------------------------------|
//! | `message`     | target node, edge, source node         |
//! | `update`      | previous node embedding, aggregate     |
//! | `edge_update` | previous edge, feature node, obs node  |
//! | `attention[w]`| source feature `w`, target feature `v` |
//! | feature heads | observation node, feature node         |
//!
//! The batched forward pass never materializes a concatenation. It slices
//! the weight by rows instead, so node-level products are computed once per
//! node and gathered per edge.

use std::rc::Rc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DropMasks, Graph};
use crate::numcore::{Activation, Matrix, Reduce, Rng, Tape, Var, DEFAULT_LEAKY_SLOPE};

/// Architecture sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    pub node_dim: usize,
    pub edge_dim: usize,
    pub message_dim: usize,
    pub layers: usize,
    pub aggregation: Reduce,
    pub leaky_slope: f64,
    pub feature_head: FeatureHead,
}

/// How continuous features are read out from `(h_obs, h_feature)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureHead {
    /// One linear layer per continuous feature.
    #[default]
    PerFeature,
    /// One linear layer shared by all continuous features. The prediction
    /// for cell `(i, j)` is then a sum of a row term and a column term.
    Shared,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            node_dim: 64,
            edge_dim: 64,
            message_dim: 64,
            layers: 3,
            aggregation: Reduce::Mean,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            feature_head: FeatureHead::default(),
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if self.node_dim == 0 || self.edge_dim == 0 || self.message_dim == 0 || self.layers == 0 {
            return Err(Error::Config("dimensions and layer count must be positive".into()));
        }
        if self.message_dim != self.node_dim {
            return Err(Error::Config(format!(
                "message width {} must equal node width {}: feature nodes pool \
                 bipartite and feature messages together",
                self.message_dim, self.node_dim
            )));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Config("leaky slope must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// What the label head predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "classes")]
pub enum LabelKind {
    Regression,
    Classification(usize),
}

impl LabelKind {
    pub fn width(self) -> usize {
        match self {
            LabelKind::Regression => 1,
            LabelKind::Classification(k) => k,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSlots {
    pub message: usize,
    pub message_bias: usize,
    pub update: usize,
    pub update_bias: usize,
    pub edge_update: usize,
    pub edge_bias: usize,
    /// One per source feature.
    pub attention: Vec<usize>,
    pub attention_bias: usize,
    /// `m * m x 1`; entry `w * m + v` is the strength of arc `w -> v`.
    pub strength: usize,
    pub edge_in: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSlots {
    pub weight: usize,
    pub bias: usize,
}

/// Where each tensor lives in [`ModelParams::tensors`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub num_features: usize,
    pub categories: Vec<usize>,
    pub edge_width: usize,
    pub layers: Vec<LayerSlots>,
    /// Continuous readout: `2 d_n x h` weight, `1 x h` bias.
    pub continuous_head: Option<HeadSlots>,
    /// Per feature, its output column in the continuous head.
    pub continuous_columns: Vec<Option<usize>>,
    /// Indexed by feature; `Some` for categorical features.
    pub categorical_heads: Vec<Option<HeadSlots>>,
    pub label_head: Option<HeadSlots>,
    pub label_kind: Option<LabelKind>,
    pub names: Vec<String>,
}

/// All trainable tensors plus their layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub tensors: Vec<Matrix>,
    pub layout: Layout,
}

struct Builder<'r> {
    tensors: Vec<Matrix>,
    names: Vec<String>,
    rng: &'r mut Rng,
}

impl Builder<'_> {
    fn glorot(&mut self, name: String, fan_in: usize, fan_out: usize) -> usize {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| self.rng.random_range(-a..=a))
            .collect();
        self.push(name, Matrix::from_vec(fan_in, fan_out, data).expect("shape"))
    }

    fn zeros(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.push(name, Matrix::zeros(rows, cols))
    }

    fn push(&mut self, name: String, m: Matrix) -> usize {
        self.tensors.push(m);
        self.names.push(name);
        self.tensors.len() - 1
    }
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, unit arc strengths.
    pub fn init(
        hyper: &Hyper,
        categories: &[usize],
        label: Option<LabelKind>,
        rng: &mut Rng,
    ) -> Result<Self> {
        hyper.validate()?;
        let m = categories.len();
        if m == 0 {
            return Err(Error::Config("model needs at least one feature".into()));
        }
        if m > hyper.node_dim {
            return Err(Error::Config(format!(
                "{m} features need node embeddings of width at least {m}, got {}",
                hyper.node_dim
            )));
        }
        let (dn, de, dm) = (hyper.node_dim, hyper.edge_dim, hyper.message_dim);
        let edge_width = crate::graph::initial_edge_width(categories);
        let mut b = Builder {
            tensors: Vec::new(),
            names: Vec::new(),
            rng,
        };
        let mut layers = Vec::with_capacity(hyper.layers);
        for l in 0..hyper.layers {
            let edge_in = if l == 0 { edge_width } else { de };
            let p = |s: &str| format!("layer{}.{s}", l + 1);
            let message = b.glorot(p("message"), 2 * dn + edge_in, dm);
            let message_bias = b.zeros(p("message_bias"), 1, dm);
            let update = b.glorot(p("update"), dn + dm, dn);
            let update_bias = b.zeros(p("update_bias"), 1, dn);
            let edge_update = b.glorot(p("edge_update"), edge_in + 2 * dn, de);
            let edge_bias = b.zeros(p("edge_bias"), 1, de);
            let attention = (0..m)
                .map(|w| b.glorot(p(&format!("attention{w}")), 2 * dn, dn))
                .collect();
            let attention_bias = b.zeros(p("attention_bias"), 1, dn);
            let strength = b.push(p("strength"), Matrix::filled(m * m, 1, 1.0));
            layers.push(LayerSlots {
                message,
                message_bias,
                update,
                update_bias,
                edge_update,
                edge_bias,
                attention,
                attention_bias,
                strength,
                edge_in,
            });
        }
        let mut next = 0;
        let continuous_columns: Vec<Option<usize>> = categories
            .iter()
            .map(|&k| {
                (k == 0).then(|| match hyper.feature_head {
                    FeatureHead::Shared => 0,
                    FeatureHead::PerFeature => {
                        next += 1;
                        next - 1
                    }
                })
            })
            .collect();
        let width = match hyper.feature_head {
            FeatureHead::Shared => 1,
            FeatureHead::PerFeature => next,
        };
        let continuous_head = categories.contains(&0).then(|| HeadSlots {
            weight: b.glorot("head.continuous".into(), 2 * dn, width),
            bias: b.zeros("head.continuous_bias".into(), 1, width),
        });
        let categorical_heads = categories
            .iter()
            .enumerate()
            .map(|(j, &k)| {
                (k > 0).then(|| HeadSlots {
                    weight: b.glorot(format!("head.categorical{j}"), 2 * dn, k),
                    bias: b.zeros(format!("head.categorical{j}_bias"), 1, k),
                })
            })
            .collect();
        let label_head = label.map(|kind| HeadSlots {
            weight: b.glorot("head.label".into(), m, kind.width()),
            bias: b.zeros("head.label_bias".into(), 1, kind.width()),
        });
        Ok(Self {
            tensors: b.tensors,
            layout: Layout {
                num_features: m,
                categories: categories.to_vec(),
                edge_width,
                layers,
                continuous_head,
                continuous_columns,
                categorical_heads,
                label_head,
                label_kind: label,
                names: b.names,
            },
        })
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.layout.names[i]
    }

    /// Records every tensor as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound<'_> {
        Bound {
            vars: self.tensors.iter().map(|t| tape.param(t.clone())).collect(),
            layout: &self.layout,
        }
    }

    pub fn layer_strength(&self, layer: usize, w: usize, v: usize) -> f64 {
        let m = self.layout.num_features;
        self.tensors[self.layout.layers[layer].strength].data()[w * m + v]
    }

    pub fn set_layer_strength(&mut self, layer: usize, w: usize, v: usize, value: f64) {
        let m = self.layout.num_features;
        let slot = self.layout.layers[layer].strength;
        self.tensors[slot].data_mut()[w * m + v] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}

/// Parameters recorded on a tape.
pub struct Bound<'p> {
    pub vars: Vec<Var>,
    pub layout: &'p Layout,
}

impl Bound<'_> {
    #[inline]
    fn v(&self, slot: usize) -> Var {
        self.vars[slot]
    }
}

/// Handles to the outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `n x d_n` observation embeddings after the last layer.
    pub obs_emb: Var,
    /// `m x d_n` feature embeddings after the last layer.
    pub feat_emb: Var,
    /// Continuous head: `n x h` observation terms, `m x h` feature terms,
    /// `1 x h` bias.
    continuous: Option<(Var, Var, Var)>,
    columns: Vec<Option<usize>>,
    head_width: usize,
    /// Per feature: `n x k` logits for categorical features.
    logits: Vec<Option<Var>>,
}

fn rc(v: Vec<usize>) -> Rc<[usize]> {
    v.into()
}

/// Runs all layers over the graph.
///
/// With `training` set, only the retained edges and arcs of `masks` take
/// part and attention weights are dropped by `masks.attention_keep`. When
/// `training` is false the whole graph is used and `masks` is ignored.
/// Arcs whose sign gate is 0 carry no message and are left out of the
/// aggregation entirely.
pub fn forward(
    tape: &mut Tape,
    graph: &Graph,
    params: &Bound<'_>,
    hyper: &Hyper,
    masks: Option<&DropMasks>,
    training: bool,
) -> Result<Forward> {
    let layout = params.layout;
    let (n, m) = (graph.num_obs, graph.num_features);
    let dn = hyper.node_dim;
    if layout.num_features != m || layout.categories != graph.categories {
        return Err(Error::Schema(format!(
            "model built for {} features {:?}, graph has {m} features {:?}",
            layout.num_features, layout.categories, graph.categories
        )));
    }
    if layout.layers.len() != hyper.layers || layout.edge_width != graph.edge_width {
        return Err(Error::Config("hyperparameters do not match the model layout".into()));
    }
    if m > dn {
        return Err(Error::Config(format!(
            "{m} features need node embeddings of width at least {m}, got {dn}"
        )));
    }
    let masks = if training {
        Some(masks.ok_or_else(|| {
            Error::Config("training forward pass needs dropout masks".into())
        })?)
    } else {
        None
    };

    // Edges and arcs in play.
    let edge_ids: Vec<usize> = match masks {
        Some(mk) => mk.retained_edges.clone(),
        None => (0..graph.edges.len()).collect(),
    };
    let all_arcs;
    let arcs: &[(usize, usize)] = match masks {
        Some(mk) => &mk.retained_arcs,
        None => {
            all_arcs = graph.feature_arcs();
            &all_arcs
        }
    };
    // Active arcs grouped by source, remembering their position in `arcs`.
    let mut by_source: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m];
    for (k, &(w, v)) in arcs.iter().enumerate() {
        if graph.signs.get(w, v) != 0 {
            by_source[w].push((v, k));
        }
    }
    let active: Vec<(usize, usize, usize)> = by_source
        .iter()
        .enumerate()
        .flat_map(|(w, list)| list.iter().map(move |&(v, k)| (w, v, k)))
        .collect();

    let obs_idx = rc(edge_ids.iter().map(|&e| graph.edges[e].obs).collect());
    let feat_node_idx = rc(edge_ids
        .iter()
        .map(|&e| graph.feature_node(graph.edges[e].feature))
        .collect());
    let msg_targets: Rc<[usize]> = {
        let mut t: Vec<usize> = feat_node_idx.iter().chain(obs_idx.iter()).copied().collect();
        t.extend(active.iter().map(|&(_, v, _)| graph.feature_node(v)));
        t.into()
    };
    let arc_sources = rc(active.iter().map(|&(w, _, _)| w).collect());
    let arc_pairs = rc(active.iter().map(|&(w, v, _)| w * m + v).collect());
    let arc_signs = Rc::new(Matrix::column(
        &active
            .iter()
            .map(|&(w, v, _)| f64::from(graph.signs.get(w, v)))
            .collect::<Vec<_>>(),
    ));

    // Initial embeddings.
    let mut h0 = Matrix::filled(n + m, dn, 1.0);
    for j in 0..m {
        let row = h0.row_mut(n + j);
        row.iter_mut().for_each(|x| *x = 0.0);
        row[j] = 1.0;
    }
    let mut h = tape.constant(h0);
    let mut e = {
        let init = tape.constant(graph.edge_init.clone());
        tape.gather_rows(init, rc(edge_ids.clone()))?
    };

    let count_isolated = |targets: &[usize]| {
        let mut seen = vec![false; n + m];
        targets.iter().for_each(|&t| seen[t] = true);
        seen.iter().filter(|s| !**s).count()
    };
    let isolated = count_isolated(&msg_targets);
    if isolated > 0 {
        log::debug!("{isolated} nodes receive no messages; their aggregate is zero");
    }

    for (l, slots) in layout.layers.iter().enumerate() {
        let de_in = slots.edge_in;
        let p = params.v(slots.message);
        let p_target = tape.slice_rows(p, 0, dn)?;
        let p_edge = tape.slice_rows(p, dn, de_in)?;
        let p_source = tape.slice_rows(p, dn + de_in, dn)?;

        // Bipartite messages, both directions, sharing one weight.
        let hp_t = tape.matmul(h, p_target)?;
        let hp_s = tape.matmul(h, p_source)?;
        let ep = tape.matmul(e, p_edge)?;
        let to_feat = {
            let a = tape.gather_rows(hp_t, feat_node_idx.clone())?;
            let c = tape.gather_rows(hp_s, obs_idx.clone())?;
            let s = tape.add(a, ep)?;
            tape.add(s, c)?
        };
        let to_obs = {
            let a = tape.gather_rows(hp_t, obs_idx.clone())?;
            let c = tape.gather_rows(hp_s, feat_node_idx.clone())?;
            let s = tape.add(a, ep)?;
            tape.add(s, c)?
        };
        let pre = tape.concat_rows(&[to_feat, to_obs])?;
        let pre = tape.add_row(pre, params.v(slots.message_bias))?;
        let mut messages = vec![tape.relu(pre)];

        // Feature-to-feature messages.
        if !active.is_empty() {
            let hf = tape.slice_rows(h, n, m)?;
            let mut scores = Vec::new();
            for (w, list) in by_source.iter().enumerate() {
                if list.is_empty() {
                    continue;
                }
                let u = params.v(slots.attention[w]);
                let u_source = tape.slice_rows(u, 0, dn)?;
                let u_target = tape.slice_rows(u, dn, dn)?;
                let targets_part = tape.matmul(hf, u_target)?;
                let targets_part =
                    tape.gather_rows(targets_part, rc(list.iter().map(|&(v, _)| v).collect()))?;
                let h_w = tape.slice_rows(hf, w, 1)?;
                let source_part = tape.matmul(h_w, u_source)?;
                scores.push(tape.add_row(targets_part, source_part)?);
            }
            let score = tape.concat_rows(&scores)?;
            let score = tape.add_row(score, params.v(slots.attention_bias))?;
            let score = tape.activation(score, Activation::LeakyRelu(hyper.leaky_slope));
            let mut alpha = tape.softmax_rows(score);
            if let Some(mk) = masks {
                let keep = &mk.attention_keep[l];
                let mut sel = Matrix::zeros(active.len(), dn);
                for (r, &(_, _, k)) in active.iter().enumerate() {
                    sel.row_mut(r).copy_from_slice(keep.row(k));
                }
                alpha = tape.mul_const(alpha, Rc::new(sel))?;
            }
            let strength = tape.gather_rows(params.v(slots.strength), arc_pairs.clone())?;
            let coef = tape.mul_const(strength, arc_signs.clone())?;
            let alpha = tape.row_scale(alpha, coef)?;
            let sources = tape.gather_rows(hf, arc_sources.clone())?;
            messages.push(tape.mul(alpha, sources)?);
        }

        let all = if messages.len() == 1 {
            messages[0]
        } else {
            tape.concat_rows(&messages)?
        };
        let agg = tape.segment_reduce(all, msg_targets.clone(), n + m, hyper.aggregation)?;

        // Node update.
        let q = params.v(slots.update);
        let q_self = tape.slice_rows(q, 0, dn)?;
        let q_msg = tape.slice_rows(q, dn, hyper.message_dim)?;
        let a = tape.matmul(h, q_self)?;
        let b = tape.matmul(agg, q_msg)?;
        let s = tape.add(a, b)?;
        let s = tape.add_row(s, params.v(slots.update_bias))?;
        let h_new = tape.relu(s);

        // Edge update; the last layer's edges feed nothing downstream.
        if l + 1 < layout.layers.len() {
            let w = params.v(slots.edge_update);
            let w_edge = tape.slice_rows(w, 0, de_in)?;
            let w_feat = tape.slice_rows(w, de_in, dn)?;
            let w_obs = tape.slice_rows(w, de_in + dn, dn)?;
            let a = tape.matmul(e, w_edge)?;
            let hf_w = tape.matmul(h_new, w_feat)?;
            let ho_w = tape.matmul(h_new, w_obs)?;
            let b = tape.gather_rows(hf_w, feat_node_idx.clone())?;
            let c = tape.gather_rows(ho_w, obs_idx.clone())?;
            let s = tape.add(a, b)?;
            let s = tape.add(s, c)?;
            let s = tape.add_row(s, params.v(slots.edge_bias))?;
            e = tape.relu(s);
        }
        h = h_new;
    }

    let obs_emb = tape.slice_rows(h, 0, n)?;
    let feat_emb = tape.slice_rows(h, n, m)?;

    let mut head_width = 0;
    let continuous = match &layout.continuous_head {
        Some(head) => {
            let w = params.v(head.weight);
            let w_obs = tape.slice_rows(w, 0, dn)?;
            let w_feat = tape.slice_rows(w, dn, dn)?;
            let a = tape.matmul(obs_emb, w_obs)?;
            let b = tape.matmul(feat_emb, w_feat)?;
            head_width = tape.value(a).cols();
            Some((a, b, params.v(head.bias)))
        }
        None => None,
    };
    let mut logits = Vec::with_capacity(m);
    for (j, head) in layout.categorical_heads.iter().enumerate() {
        let Some(head) = head else {
            logits.push(None);
            continue;
        };
        let w = params.v(head.weight);
        let w_obs = tape.slice_rows(w, 0, dn)?;
        let w_feat = tape.slice_rows(w, dn, dn)?;
        let a = tape.matmul(obs_emb, w_obs)?;
        let h_j = tape.slice_rows(feat_emb, j, 1)?;
        let b = tape.matmul(h_j, w_feat)?;
        let s = tape.add_row(a, b)?;
        logits.push(Some(tape.add_row(s, params.v(head.bias))?));
    }

    Ok(Forward {
        obs_emb,
        feat_emb,
        continuous,
        columns: layout.continuous_columns.clone(),
        head_width,
        logits,
    })
}

impl Forward {
    /// Raw continuous predictions for the given cells, as a column.
    pub fn predict_continuous(&self, tape: &mut Tape, cells: &[(usize, usize)]) -> Result<Var> {
        let (a, b, bias) = self
            .continuous
            .ok_or_else(|| Error::Config("model has no continuous features".into()))?;
        let h = self.head_width;
        let mut ia = Vec::with_capacity(cells.len());
        let mut ib = Vec::with_capacity(cells.len());
        let mut ic = Vec::with_capacity(cells.len());
        for &(i, j) in cells {
            let c = self.columns[j]
                .ok_or_else(|| Error::Config(format!("feature {j} is not continuous")))?;
            ia.push(i * h + c);
            ib.push(j * h + c);
            ic.push(c);
        }
        let ga = tape.pick(a, rc(ia))?;
        let gb = tape.pick(b, rc(ib))?;
        let gc = tape.pick(bias, rc(ic))?;
        let s = tape.add(ga, gb)?;
        tape.add(s, gc)
    }

    /// Logits of categorical feature `j` for the given observations.
    pub fn categorical_logits(&self, tape: &mut Tape, feature: usize, obs: &[usize]) -> Result<Var> {
        let l = self
            .logits
            .get(feature)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Config(format!("feature {feature} is not categorical")))?;
        tape.gather_rows(l, rc(obs.to_vec()))
    }

    /// Full logits matrix (`n x k`) of categorical feature `j`.
    pub fn logits(&self, feature: usize) -> Option<Var> {
        self.logits.get(feature).copied().flatten()
    }

    /// The `n x m` imputed matrix on the tape. Continuous cells hold raw
    /// head outputs; categorical cells hold the expected class index under
    /// the predicted distribution.
    pub fn imputed_matrix(&self, tape: &mut Tape, n: usize) -> Result<Var> {
        let mut columns = Vec::with_capacity(self.logits.len());
        for (j, logit) in self.logits.iter().enumerate() {
            match logit {
                Some(l) => {
                    let k = tape.value(*l).cols();
                    let probs = tape.softmax_rows(*l);
                    let idx =
                        tape.constant(Matrix::column(&(0..k).map(|c| c as f64).collect::<Vec<_>>()));
                    columns.push(tape.matmul(probs, idx)?);
                }
                None => {
                    let (a, b, bias) = self.continuous.expect("continuous head");
                    let (h, c) = (self.head_width, self.columns[j].expect("continuous column"));
                    let a_j = tape.pick(a, rc((0..n).map(|i| i * h + c).collect()))?;
                    let b_j = tape.pick(b, rc(vec![j * h + c]))?;
                    let bias_j = tape.pick(bias, rc(vec![c]))?;
                    let off = tape.add(b_j, bias_j)?;
                    columns.push(tape.add_row(a_j, off)?);
                }
            }
        }
        tape.concat_cols(&columns)
    }
}

/// Label head on the tape: `n x m` imputed matrix to `n x width` outputs
/// (logits for classification).
pub fn label_head(tape: &mut Tape, params: &Bound<'_>, imputed: Var) -> Result<Var> {
    let head = params
        .layout
        .label_head
        .as_ref()
        .ok_or_else(|| Error::Config("model has no label head".into()))?;
    let z = tape.matmul(imputed, params.v(head.weight))?;
    tape.add_row(z, params.v(head.bias))
}

// Per-vector reference operations. The batched forward pass computes the
// same quantities for whole edge sets at once.

fn affine(parts: &[&[f64]], weight: &Matrix, bias: &[f64], act: Activation) -> Result<Vec<f64>> {
    let width: usize = parts.iter().map(|p| p.len()).sum();
    if width != weight.rows() || bias.len() != weight.cols() {
        return Err(Error::Shape(format!(
            "input width {width} and bias width {} vs weight {}x{}",
            bias.len(),
            weight.rows(),
            weight.cols()
        )));
    }
    let mut out = bias.to_vec();
    let mut i = 0;
    for part in parts {
        for &x in *part {
            for (o, w) in out.iter_mut().zip(weight.row(i)) {
                *o += x * w;
            }
            i += 1;
        }
    }
    Ok(out.into_iter().map(|v| act.apply(v)).collect())
}

/// `relu(P^T [h_target; e; h_source] + b)`.
pub fn bipartite_message(
    target: &[f64],
    edge: &[f64],
    source: &[f64],
    weight: &Matrix,
    bias: &[f64],
) -> Result<Vec<f64>> {
    affine(&[target, edge, source], weight, bias, Activation::Relu)
}

/// `leaky_relu(U_w^T [h_w; h_v] + g)`.
pub fn attention_score(
    source: &[f64],
    target: &[f64],
    weight: &Matrix,
    bias: &[f64],
    slope: f64,
) -> Result<Vec<f64>> {
    affine(&[source, target], weight, bias, Activation::LeakyRelu(slope))
}

/// Softmax over the score elements; while training each element is zeroed
/// with probability `drop_rate` and the survivors are not rescaled.
pub fn attention_weights(score: &[f64], drop_rate: f64, training: bool, rng: &mut Rng) -> Vec<f64> {
    let mut alpha = crate::numcore::softmax(score);
    if training {
        for a in alpha.iter_mut() {
            if rng.random::<f64>() <= drop_rate {
                *a = 0.0;
            }
        }
    }
    alpha
}

/// `(rho * strength * alpha) ⊙ h_source`.
pub fn feature_message(source: &[f64], alpha: &[f64], sign: i8, strength: f64) -> Vec<f64> {
    let k = f64::from(sign) * strength;
    alpha.iter().zip(source).map(|(a, h)| k * a * h).collect()
}

/// Elementwise pooling; an empty multiset yields zeros of `width`.
pub fn aggregate(messages: &[Vec<f64>], width: usize, kind: Reduce) -> Result<Vec<f64>> {
    if messages.is_empty() {
        return Ok(vec![0.0; width]);
    }
    if messages.iter().any(|m| m.len() != width) {
        return Err(Error::Shape("messages of different widths".into()));
    }
    let mut out = messages[0].clone();
    for msg in &messages[1..] {
        for (o, x) in out.iter_mut().zip(msg) {
            match kind {
                Reduce::Max => *o = o.max(*x),
                Reduce::Sum | Reduce::Mean => *o += x,
            }
        }
    }
    if kind == Reduce::Mean {
        let inv = 1.0 / messages.len() as f64;
        out.iter_mut().for_each(|x| *x *= inv);
    }
    Ok(out)
}

/// `relu(Q^T [h; m] + c)`.
pub fn update_node(h: &[f64], message: &[f64], weight: &Matrix, bias: &[f64]) -> Result<Vec<f64>> {
    affine(&[h, message], weight, bias, Activation::Relu)
}

/// `relu(W^T [e; h_feature; h_obs] + d)`, using the current layer's
/// updated node embeddings.
pub fn update_edge(
    edge: &[f64],
    h_feature: &[f64],
    h_obs: &[f64],
    weight: &Matrix,
    bias: &[f64],
) -> Result<Vec<f64>> {
    affine(&[edge, h_feature, h_obs], weight, bias, Activation::Relu)
}

/// Linear label readout of one imputed row; classification returns the
/// softmax distribution.
pub fn readout_label(row: &[f64], weight: &Matrix, bias: &[f64], kind: LabelKind) -> Result<Vec<f64>> {
    let out = affine(&[row], weight, bias, Activation::Identity)?;
    Ok(match kind {
        LabelKind::Regression => out,
        LabelKind::Classification(_) => crate::numcore::softmax(&out),
    })
}
