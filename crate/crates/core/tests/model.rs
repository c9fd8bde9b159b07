mod common;

use bcgnn::graph::{build_graph, DropMasks, Graph};
use bcgnn::model::{
    aggregate, attention_score, bipartite_message, feature_message, forward, update_edge, update_node, FeatureHead, Hyper,
    ModelParams,
};
use bcgnn::numcore::{seeded_rng, softmax, Matrix, Reduce, Tape};
use bcgnn::SignMatrix;

use common::{small_dataset, small_hyper};

/// Per-node evaluation built from the single-vector operations. Returns
/// final node embeddings and the continuous prediction of every cell.
fn reference(
    graph: &Graph,
    params: &ModelParams,
    hyper: &Hyper,
    masks: Option<&DropMasks>,
    with_feature_graph: bool,
) -> (Vec<Vec<f64>>, Matrix) {
    let (n, m, dn) = (graph.num_obs, graph.num_features, hyper.node_dim);
    let t = &params.tensors;
    let lay = &params.layout;
    let mut h: Vec<Vec<f64>> = (0..n + m)
        .map(|v| {
            if v < n {
                vec![1.0; dn]
            } else {
                let mut x = vec![0.0; dn];
                x[v - n] = 1.0;
                x
            }
        })
        .collect();
    let edges: Vec<usize> = masks.map_or((0..graph.edges.len()).collect(), |mk| mk.retained_edges.clone());
    let arcs: Vec<(usize, usize)> = masks.map_or(graph.feature_arcs(), |mk| mk.retained_arcs.clone());
    let mut e: Vec<Vec<f64>> = edges.iter().map(|&k| graph.edge_init.row(k).to_vec()).collect();
    for (l, s) in lay.layers.iter().enumerate() {
        let mut inbox: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n + m];
        for (k, &id) in edges.iter().enumerate() {
            let (u, v) = (graph.edges[id].obs, n + graph.edges[id].feature);
            let b = t[s.message_bias].row(0);
            inbox[v].push(bipartite_message(&h[v], &e[k], &h[u], &t[s.message], b).unwrap());
            inbox[u].push(bipartite_message(&h[u], &e[k], &h[v], &t[s.message], b).unwrap());
        }
        if with_feature_graph {
            for (a, &(w, v)) in arcs.iter().enumerate() {
                let rho = graph.signs.get(w, v);
                if rho == 0 {
                    continue;
                }
                let score = attention_score(
                    &h[n + w],
                    &h[n + v],
                    &t[s.attention[w]],
                    t[s.attention_bias].row(0),
                    hyper.leaky_slope,
                )
                .unwrap();
                let mut alpha = softmax(&score);
                if let Some(mk) = masks {
                    alpha.iter_mut().zip(mk.attention_keep[l].row(a)).for_each(|(x, k)| *x *= k);
                }
                let strength = params.layer_strength(l, w, v);
                inbox[n + v].push(feature_message(&h[n + w], &alpha, rho, strength));
            }
        }
        let new_h: Vec<Vec<f64>> = (0..n + m)
            .map(|v| {
                let agg = aggregate(&inbox[v], hyper.message_dim, hyper.aggregation).unwrap();
                update_node(&h[v], &agg, &t[s.update], t[s.update_bias].row(0)).unwrap()
            })
            .collect();
        if l + 1 < lay.layers.len() {
            e = edges
                .iter()
                .enumerate()
                .map(|(k, &id)| {
                    let (u, v) = (graph.edges[id].obs, n + graph.edges[id].feature);
                    update_edge(&e[k], &new_h[v], &new_h[u], &t[s.edge_update], t[s.edge_bias].row(0)).unwrap()
                })
                .collect();
        }
        h = new_h;
    }
    let mut pred = Matrix::zeros(n, m);
    if let Some(head) = &lay.continuous_head {
        let w = &t[head.weight];
        for i in 0..n {
            for j in 0..m {
                let Some(c) = lay.continuous_columns[j] else { continue };
                let mut s = t[head.bias].get(0, c);
                for k in 0..dn {
                    s += h[i][k] * w.get(k, c) + h[n + j][k] * w.get(dn + k, c);
                }
                pred.set(i, j, s);
            }
        }
    }
    (h, pred)
}

fn batched(graph: &Graph, params: &ModelParams, hyper: &Hyper, masks: Option<&DropMasks>) -> (Matrix, Matrix, Matrix) {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let fwd = forward(&mut tape, graph, &bound, hyper, masks, masks.is_some()).unwrap();
    let (n, m) = (graph.num_obs, graph.num_features);
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let p = fwd.predict_continuous(&mut tape, &cells).unwrap();
    let pred = Matrix::from_vec(n, m, tape.value(p).data().to_vec()).unwrap();
    (tape.value(fwd.obs_emb).clone(), tape.value(fwd.feat_emb).clone(), pred)
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol * (1.0 + x.abs()), "{x} vs {y}");
    }
}

fn check_against_reference(agg: Reduce, head: FeatureHead, training: bool) {
    let ds = small_dataset(7, 4, 11);
    let mut hyper = small_hyper();
    hyper.aggregation = agg;
    hyper.feature_head = head;
    let signs = SignMatrix::from_signs(4, vec![0, 1, -1, 0, 1, 0, 0, 1, -1, 1, 0, -1, 0, 1, 1, 0]).unwrap();
    let graph = build_graph(&ds, &signs, hyper.node_dim).unwrap();
    let mut rng = seeded_rng(2);
    let mut params = ModelParams::init(&hyper, &graph.categories, None, &mut rng).unwrap();
    params.set_layer_strength(0, 1, 2, -0.7);
    params.set_layer_strength(1, 2, 0, 1.9);
    let masks = DropMasks::sample(&graph, 0.4, 0.3, 0.3, hyper.layers, hyper.node_dim, &mut rng);
    let masks = training.then_some(&masks);
    let (h, pred_ref) = reference(&graph, &params, &hyper, masks, true);
    let (obs, feat, pred) = batched(&graph, &params, &hyper, masks);
    for i in 0..graph.num_obs {
        assert_close(obs.row(i), &h[i], 1e-12);
    }
    for j in 0..graph.num_features {
        assert_close(feat.row(j), &h[graph.num_obs + j], 1e-12);
    }
    assert_close(pred.data(), pred_ref.data(), 1e-12);
}

#[test]
fn batched_forward_matches_per_node_reference() {
    for agg in [Reduce::Mean, Reduce::Sum, Reduce::Max] {
        check_against_reference(agg, FeatureHead::PerFeature, false);
        check_against_reference(agg, FeatureHead::PerFeature, true);
    }
    check_against_reference(Reduce::Mean, FeatureHead::Shared, false);
    check_against_reference(Reduce::Max, FeatureHead::Shared, true);
}

#[test]
fn zero_signs_equal_model_without_feature_graph() {
    let ds = small_dataset(6, 3, 4);
    let hyper = small_hyper();
    let graph = build_graph(&ds, &SignMatrix::zeros(3), hyper.node_dim).unwrap();
    let params = ModelParams::init(&hyper, &graph.categories, None, &mut seeded_rng(9)).unwrap();
    let (h, pred_ref) = reference(&graph, &params, &hyper, None, false);
    let (obs, feat, pred) = batched(&graph, &params, &hyper, None);
    assert_close(pred.data(), pred_ref.data(), 1e-12);
    assert_close(obs.row(0), &h[0], 1e-12);
    assert_close(feat.row(2), &h[ds.num_rows() + 2], 1e-12);
}

#[test]
fn evaluation_ignores_masks() {
    let ds = small_dataset(6, 3, 5);
    let hyper = small_hyper();
    let signs = SignMatrix::from_signs(3, vec![0, 1, 1, -1, 0, 1, 1, 1, 0]).unwrap();
    let graph = build_graph(&ds, &signs, hyper.node_dim).unwrap();
    let mut rng = seeded_rng(5);
    let params = ModelParams::init(&hyper, &graph.categories, None, &mut rng).unwrap();
    let masks = DropMasks::sample(&graph, 0.5, 0.5, 0.3, hyper.layers, hyper.node_dim, &mut rng);
    let run = |mk: Option<&DropMasks>| {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let f = forward(&mut tape, &graph, &bound, &hyper, mk, false).unwrap();
        tape.value(f.obs_emb).clone()
    };
    assert_eq!(run(None), run(Some(&masks)));
}

#[test]
fn row_permutation_permutes_predictions() {
    let ds = small_dataset(9, 4, 21);
    let hyper = small_hyper();
    let signs = SignMatrix::from_signs(4, vec![0, 1, -1, 1, 1, 0, 1, 0, -1, 1, 0, 1, 1, 0, 1, 0]).unwrap();
    let params = {
        let g = build_graph(&ds, &signs, hyper.node_dim).unwrap();
        ModelParams::init(&hyper, &g.categories, None, &mut seeded_rng(1)).unwrap()
    };
    let perm = [4, 0, 8, 2, 7, 1, 3, 6, 5];
    let permuted = ds.select_rows(&perm);
    let (_, _, a) = batched(&build_graph(&ds, &signs, hyper.node_dim).unwrap(), &params, &hyper, None);
    let (_, _, b) = batched(&build_graph(&permuted, &signs, hyper.node_dim).unwrap(), &params, &hyper, None);
    for (new, &old) in perm.iter().enumerate() {
        assert_eq!(b.row(new), a.row(old));
    }
}

#[test]
fn categorical_outputs_are_distributions() {
    let ds = common::mixed_dataset(3, 7);
    let hyper = small_hyper();
    let graph = build_graph(&ds, &SignMatrix::zeros(4), hyper.node_dim).unwrap();
    let params = ModelParams::init(&hyper, &graph.categories, None, &mut seeded_rng(3)).unwrap();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let f = forward(&mut tape, &graph, &bound, &hyper, None, false).unwrap();
    let d = f.imputed_matrix(&mut tape, 3).unwrap();
    assert_eq!(tape.value(d).shape(), (3, 4));
    let logits = f.logits(3).unwrap();
    let probs = tape.softmax_rows(logits);
    for r in 0..3 {
        assert!((tape.value(probs).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}


#[test]
fn finite_difference_gradients() {
    for (name, rel) in common::gradient_check_errors() {
        assert!(rel < 1e-5, "{name}: relative error {rel}");
    }
}
