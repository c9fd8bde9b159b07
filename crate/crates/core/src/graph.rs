//! The union graph: a bipartite observation/feature graph with one edge per
//! observed cell, plus the complete directed graph over feature nodes whose
//! arcs are gated by correlation signs.

use rand::Rng as _;
use serde::Serialize;

use crate::correlation::SignMatrix;
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BipartiteEdge {
    pub obs: usize,
    pub feature: usize,
}

#[derive(Clone, Debug)]
pub struct Graph {
    pub num_obs: usize,
    pub num_features: usize,
    /// Observed cells in row-major order.
    pub edges: Vec<BipartiteEdge>,
    /// Layer-0 edge features, one row per edge, `edge_width` wide.
    pub edge_init: Matrix,
    /// Scaled value (continuous) or class index (categorical) per edge.
    pub edge_values: Vec<f64>,
    pub signs: SignMatrix,
    /// Class count per feature, 0 for continuous.
    pub categories: Vec<usize>,
    pub edge_width: usize,
    /// `edge_lookup[i * m + j]` is the edge for cell (i, j), if observed.
    edge_lookup: Vec<Option<usize>>,
}

/// Size summary written to the training log.
#[derive(Clone, Debug, Serialize)]
pub struct GraphStats {
    pub observations: usize,
    pub features: usize,
    pub bipartite_edges: usize,
    pub feature_arcs: usize,
    pub active_feature_arcs: usize,
}

/// Layer-0 edge width for a schema's class counts.
pub fn initial_edge_width(categories: &[usize]) -> usize {
    categories.iter().copied().max().unwrap_or(0).max(1)
}

/// Builds the graph for a scaled dataset with frozen sign gates.
///
/// `node_dim` is the node embedding width; feature nodes are initialized
/// with distinct one-hot vectors, so it must be at least the feature count.
pub fn build_graph(dataset: &Dataset, signs: &SignMatrix, node_dim: usize) -> Result<Graph> {
    let (n, m) = (dataset.num_rows(), dataset.num_features());
    if m > node_dim {
        return Err(Error::Config(format!(
            "{m} features need node embeddings of width at least {m}, got {node_dim}"
        )));
    }
    if signs.size() != m {
        return Err(Error::Shape(format!(
            "sign matrix for {} features, dataset has {m}",
            signs.size()
        )));
    }
    let categories = dataset.schema.category_counts();
    let width = initial_edge_width(&categories);
    let scaled = dataset.scaled();
    let mut edges = Vec::with_capacity(dataset.mask().count_observed());
    let mut values = Vec::with_capacity(edges.capacity());
    let mut edge_lookup = vec![None; n * m];
    let mut init = Vec::with_capacity(edges.capacity() * width);
    for i in 0..n {
        for j in 0..m {
            if !dataset.is_observed(i, j) {
                continue;
            }
            let v = scaled.get(i, j);
            if !v.is_finite() {
                return Err(Error::Data(format!("observed cell ({i}, {j}) is not finite")));
            }
            edge_lookup[i * m + j] = Some(edges.len());
            edges.push(BipartiteEdge { obs: i, feature: j });
            values.push(v);
            let mut feat = vec![0.0; width];
            if categories[j] > 0 {
                feat[v as usize] = 1.0;
            } else {
                feat[0] = v;
            }
            init.extend_from_slice(&feat);
        }
    }
    let edge_init = Matrix::from_vec(edges.len(), width, init)?;
    Ok(Graph {
        num_obs: n,
        num_features: m,
        edges,
        edge_init,
        edge_values: values,
        signs: signs.clone(),
        categories,
        edge_width: width,
        edge_lookup,
    })
}

impl Graph {
    pub fn num_nodes(&self) -> usize {
        self.num_obs + self.num_features
    }

    /// Node index of feature `j` (observation nodes come first).
    #[inline]
    pub fn feature_node(&self, j: usize) -> usize {
        self.num_obs + j
    }

    pub fn edge_index(&self, obs: usize, feature: usize) -> Option<usize> {
        self.edge_lookup[obs * self.num_features + feature]
    }

    /// All ordered feature pairs `(w, v)`, `w != v`.
    pub fn feature_arcs(&self) -> Vec<(usize, usize)> {
        all_arcs(self.num_features)
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            observations: self.num_obs,
            features: self.num_features,
            bipartite_edges: self.edges.len(),
            feature_arcs: self.num_features * self.num_features.saturating_sub(1),
            active_feature_arcs: self.signs.active_pairs(),
        }
    }

    /// Overwrites the stored value of one edge and its layer-0 feature.
    pub fn set_edge_value(&mut self, edge: usize, value: f64) {
        let j = self.edges[edge].feature;
        self.edge_values[edge] = value;
        let row = self.edge_init.row_mut(edge);
        row.iter_mut().for_each(|x| *x = 0.0);
        if self.categories[j] > 0 {
            row[value as usize] = 1.0;
        } else {
            row[0] = value;
        }
    }
}

fn all_arcs(m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(m * m.saturating_sub(1));
    for w in 0..m {
        for v in 0..m {
            if w != v {
                out.push((w, v));
            }
        }
    }
    out
}

/// Per-epoch dropout draws.
#[derive(Clone, Debug, PartialEq)]
pub struct DropMasks {
    /// Edge indices fed to the forward pass.
    pub retained_edges: Vec<usize>,
    /// Dropped edges; the imputation loss is computed on these.
    pub held_out_edges: Vec<usize>,
    /// Directed feature arcs `(source, target)` kept this epoch.
    pub retained_arcs: Vec<(usize, usize)>,
    /// Per layer, one 0/1 row per retained arc (`node_dim` wide).
    pub attention_keep: Vec<Matrix>,
}

/// Keeps each edge independently when its uniform draw exceeds `rate`.
pub fn drop_b(num_edges: usize, rate: f64, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let mut kept = Vec::with_capacity(num_edges);
    let mut dropped = Vec::new();
    for e in 0..num_edges {
        let u: f64 = rng.random();
        if u > rate {
            kept.push(e);
        } else {
            dropped.push(e);
        }
    }
    (kept, dropped)
}

/// Keeps each of the `m (m - 1)` directed feature arcs independently.
pub fn drop_c(m: usize, rate: f64, rng: &mut Rng) -> Vec<(usize, usize)> {
    all_arcs(m)
        .into_iter()
        .filter(|_| rng.random::<f64>() > rate)
        .collect()
}

/// 0/1 matrix whose entries survive when their uniform draw exceeds `rate`.
pub fn attention_drop_mask(rows: usize, width: usize, rate: f64, rng: &mut Rng) -> Matrix {
    let data = (0..rows * width)
        .map(|_| if rng.random::<f64>() > rate { 1.0 } else { 0.0 })
        .collect();
    Matrix::from_vec(rows, width, data).expect("mask shape")
}

impl DropMasks {
    /// Fresh draws for one epoch.
    pub fn sample(
        graph: &Graph,
        edge_rate: f64,
        arc_rate: f64,
        attention_rate: f64,
        layers: usize,
        node_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let (retained_edges, held_out_edges) = drop_b(graph.edges.len(), edge_rate, rng);
        let retained_arcs = drop_c(graph.num_features, arc_rate, rng);
        let attention_keep = (0..layers)
            .map(|_| attention_drop_mask(retained_arcs.len(), node_dim, attention_rate, rng))
            .collect();
        Self {
            retained_edges,
            held_out_edges,
            retained_arcs,
            attention_keep,
        }
    }
}
