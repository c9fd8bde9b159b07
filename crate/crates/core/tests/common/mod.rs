#![allow(dead_code)]

use bcgnn::graph::{build_graph, DropMasks};
use bcgnn::model::{forward, FeatureHead, Hyper, LabelKind, ModelParams};
use bcgnn::numcore::{seeded_rng, Matrix, Reduce, Tape};
use bcgnn::train::{imputation_loss, label_loss, LabelTargets};
use bcgnn::{Column, Dataset, Mask, Schema, SignMatrix};
use rand::Rng;

pub fn small_hyper() -> Hyper {
    Hyper {
        node_dim: 8,
        edge_dim: 8,
        message_dim: 8,
        layers: 2,
        aggregation: Reduce::Mean,
        leaky_slope: 0.01,
        feature_head: FeatureHead::PerFeature,
    }
}

/// Random continuous data in `[0, 1]` with about a fifth of the cells
/// missing; every row and column keeps at least one observed cell.
pub fn small_dataset(n: usize, m: usize, seed: u64) -> Dataset {
    let mut rng = seeded_rng(seed);
    let raw = Matrix::from_vec(n, m, (0..n * m).map(|_| rng.random::<f64>()).collect()).unwrap();
    let mut mask = Mask::full(n, m);
    for i in 0..n {
        for j in 0..m {
            if (i + j) % 3 != 0 && rng.random::<f64>() < 0.2 {
                mask.set(i, j, false);
            }
        }
    }
    let schema = Schema::new((0..m).map(|j| Column::continuous(format!("f{j}"))).collect()).unwrap();
    let mut ds = Dataset::new(schema, raw, mask, None).unwrap();
    ds.fit_scaler().unwrap();
    ds
}

/// Three continuous features and one 3-class categorical feature.
pub fn mixed_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = seeded_rng(seed);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        rows.push(vec![
            rng.random::<f64>(),
            rng.random::<f64>() * 3.0,
            rng.random::<f64>() - 0.5,
            (i % 3) as f64,
        ]);
    }
    let mut mask = Mask::full(n, 4);
    if n > 3 {
        mask.set(1, 0, false);
        mask.set(2, 3, false);
        mask.set(3, 1, false);
    }
    let schema = Schema::new(vec![
        Column::continuous("a"),
        Column::continuous("b"),
        Column::continuous("c"),
        Column::categorical("k", &["p", "q", "r"]),
    ])
    .unwrap();
    let mut ds = Dataset::new(schema, Matrix::from_rows(&rows).unwrap(), mask, None).unwrap();
    ds.fit_scaler().unwrap();
    ds
}

/// Central-difference check of every parameter tensor on a small model
/// with continuous and categorical features and a label head.
pub fn gradient_check_errors() -> Vec<(String, f64)> {
    let ds = mixed_dataset(8, 13);
    let hyper = small_hyper();
    let signs = SignMatrix::from_signs(4, vec![0, 1, -1, 1, 1, 0, 0, -1, 1, 1, 0, 1, -1, 1, 1, 0]).unwrap();
    let graph = build_graph(&ds, &signs, hyper.node_dim).unwrap();
    let mut rng = seeded_rng(17);
    let params = ModelParams::init(&hyper, &graph.categories, Some(LabelKind::Regression), &mut rng).unwrap();
    let masks = DropMasks::sample(&graph, 0.5, 0.0, 0.3, hyper.layers, hyper.node_dim, &mut rng);
    let targets = LabelTargets {
        kind: LabelKind::Regression,
        rows: vec![0, 2, 3, 5],
        values: vec![0.1, 0.8, 0.4, 0.3],
    };
    let loss = |p: &ModelParams, grads: bool| {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let f = forward(&mut tape, &graph, &bound, &hyper, Some(&masks), true).unwrap();
        let a = imputation_loss(&mut tape, &f, &graph, &masks.held_out_edges).unwrap().unwrap();
        let b = label_loss(&mut tape, &bound, &f, graph.num_obs, &targets).unwrap();
        let total = tape.add(a, b).unwrap();
        let value = tape.value(total).data()[0];
        let g = grads.then(|| {
            let g = tape.backward(total).unwrap();
            bound
                .vars
                .iter()
                .zip(&p.tensors)
                .map(|(&v, t)| g.get(v).cloned().unwrap_or_else(|| Matrix::zeros(t.rows(), t.cols())))
                .collect::<Vec<_>>()
        });
        (value, g)
    };
    let analytic = loss(&params, true).1.unwrap();
    let h = 1e-5;
    let mut out = Vec::new();
    for (ti, g) in analytic.iter().enumerate() {
        let mut num = vec![0.0; g.len()];
        for k in 0..g.len() {
            let mut p = params.clone();
            p.tensors[ti].data_mut()[k] += h;
            let up = loss(&p, false).0;
            p.tensors[ti].data_mut()[k] -= 2.0 * h;
            let down = loss(&p, false).0;
            num[k] = (up - down) / (2.0 * h);
        }
        let diff: f64 = g.data().iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na: f64 = g.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = if na.max(nn) == 0.0 { 0.0 } else { diff / na.max(nn) };
        out.push((params.name(ti).to_string(), rel));
    }
    out
}

/// Loss and every continuous prediction of one training-mode pass.
fn training_pass(graph: &bcgnn::Graph, params: &ModelParams, hyper: &Hyper, masks: &DropMasks) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let f = forward(&mut tape, graph, &bound, hyper, Some(masks), true).unwrap();
    let loss = imputation_loss(&mut tape, &f, graph, &masks.held_out_edges).unwrap().unwrap();
    let cells: Vec<(usize, usize)> =
        (0..graph.num_obs).flat_map(|i| (0..graph.num_features).map(move |j| (i, j))).collect();
    let pred = f.predict_continuous(&mut tape, &cells).unwrap();
    (tape.value(loss).data()[0], tape.value(pred).data().to_vec())
}

/// Perturbs the input features of edges and reports whether loss and
/// predictions stay bitwise equal: `(all held-out edges invariant, every
/// retained edge probed changes the output)`.
pub fn loss_isolation(seed: u64) -> (bool, bool) {
    let ds = small_dataset(40, 5, seed);
    let hyper = small_hyper();
    let signs = bcgnn::pairwise_corr(ds.scaled(), ds.mask(), bcgnn::Estimator::Spearman).unwrap().signs;
    let graph = build_graph(&ds, &signs, hyper.node_dim).unwrap();
    let mut rng = seeded_rng(seed + 1);
    let params = ModelParams::init(&hyper, &graph.categories, None, &mut rng).unwrap();
    let masks = DropMasks::sample(&graph, 0.5, 0.5, 0.3, hyper.layers, hyper.node_dim, &mut rng);
    let base = training_pass(&graph, &params, &hyper, &masks);
    let perturbed = |edge: usize| {
        let mut g = graph.clone();
        g.edge_init.row_mut(edge).iter_mut().for_each(|x| *x += 0.37);
        let (loss, pred) = training_pass(&g, &params, &hyper, &masks);
        loss.to_bits() == base.0.to_bits() && pred.iter().zip(&base.1).all(|(a, b)| a.to_bits() == b.to_bits())
    };
    let held_out = masks.held_out_edges.iter().all(|&e| perturbed(e));
    let retained = masks.retained_edges.iter().take(10).all(|&e| !perturbed(e));
    (held_out, retained)
}
