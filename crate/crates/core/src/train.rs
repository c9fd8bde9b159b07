//! Losses, the full-batch training loop, checkpoints, and inference on
//! seen or unseen observations.

use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::correlation::{pairwise_corr, Estimator, SignMatrix};
use crate::dataio::{ColumnKind, Dataset, ScalerStats, Schema};
use crate::error::{Error, Result};
use crate::graph::{build_graph, DropMasks, Graph};
use crate::model::{forward, label_head, Bound, Forward, Hyper, LabelKind, ModelParams};
use crate::numcore::{derive_seed, seeded_rng, softmax, AdamState, Matrix, Tape, Var};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BCGNNCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

const INIT_STREAM: u64 = 1;
const DROP_STREAM: u64 = 2;

/// Training settings. Unknown keys are rejected when read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hyper: Hyper,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Per-epoch drop rate of observed bipartite edges.
    pub edge_drop: f64,
    /// Per-epoch drop rate of directed feature arcs.
    pub arc_drop: f64,
    /// Per-element drop rate of attention weights.
    pub attention_drop: f64,
    pub estimator: Estimator,
    pub seed: u64,
    pub label_task: bool,
    pub label_weight: f64,
    /// Epochs between log callbacks; the last epoch is always reported.
    pub log_every: usize,
    /// Zero every sign gate, removing all feature-to-feature messages.
    pub ablate_interdependence: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// 2000 epochs; everything else as in [`TrainConfig::full`].
    pub fn desk() -> Self {
        Self {
            epochs: 2000,
            ..Self::full()
        }
    }

    /// 20000 epochs with the default hyperparameters.
    pub fn full() -> Self {
        Self {
            hyper: Hyper::default(),
            epochs: 20_000,
            learning_rate: 0.001,
            edge_drop: 0.5,
            arc_drop: 0.5,
            attention_drop: 0.3,
            estimator: Estimator::Spearman,
            seed: 0,
            label_task: false,
            label_weight: 1.0,
            log_every: 100,
            ablate_interdependence: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        for (name, r) in [
            ("edge_drop", self.edge_drop),
            ("arc_drop", self.arc_drop),
            ("attention_drop", self.attention_drop),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {r}")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.label_weight.is_finite() && self.label_weight >= 0.0) {
            return Err(Error::Config("label weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub imputation_loss: f64,
    pub label_loss: Option<f64>,
    /// Seconds since training started.
    pub wallclock: f64,
}

/// Everything needed to rebuild the model on new data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: ModelParams,
    pub hyper: Hyper,
    pub schema: Schema,
    pub scaler: ScalerStats,
    pub signs: SignMatrix,
    pub config: TrainConfig,
    pub seed: u64,
    pub epoch: usize,
    /// MinMax range of the training labels (regression only).
    pub label_range: Option<(f64, f64)>,
}

impl Checkpoint {
    /// Layout: 8-byte magic, little-endian `u32` version, then a JSON body.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        serde_json::to_writer(&mut out, self)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("missing checkpoint header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let ckpt: Checkpoint = serde_json::from_slice(&bytes[12..])
            .map_err(|e| Error::Checkpoint(format!("corrupt checkpoint body: {e}")))?;
        if ckpt.version != version {
            return Err(Error::Checkpoint("header and body versions differ".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    fn check_schema(&self, dataset: &Dataset) -> Result<()> {
        if dataset.schema.columns != self.schema.columns {
            return Err(Error::Schema(
                "dataset columns do not match the checkpoint schema".into(),
            ));
        }
        Ok(())
    }
}

/// Mean loss over held-out edges: squared error for continuous cells,
/// cross-entropy for categorical ones. `None` when nothing is held out.
pub fn imputation_loss(
    tape: &mut Tape,
    fwd: &Forward,
    graph: &Graph,
    held_out: &[usize],
) -> Result<Option<Var>> {
    if held_out.is_empty() {
        return Ok(None);
    }
    let m = graph.num_features;
    let mut cont_cells = Vec::new();
    let mut cont_targets = Vec::new();
    let mut cat_obs: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut cat_targets: Vec<Vec<usize>> = vec![Vec::new(); m];
    for &e in held_out {
        let edge = graph.edges[e];
        let v = graph.edge_values[e];
        if graph.categories[edge.feature] > 0 {
            cat_obs[edge.feature].push(edge.obs);
            cat_targets[edge.feature].push(v as usize);
        } else {
            cont_cells.push((edge.obs, edge.feature));
            cont_targets.push(v);
        }
    }
    let mut parts = Vec::new();
    if !cont_cells.is_empty() {
        let pred = fwd.predict_continuous(tape, &cont_cells)?;
        parts.push(tape.squared_error_sum(pred, cont_targets.into())?);
    }
    for j in 0..m {
        if cat_obs[j].is_empty() {
            continue;
        }
        let logits = fwd.categorical_logits(tape, j, &cat_obs[j])?;
        parts.push(tape.cross_entropy_sum(logits, std::mem::take(&mut cat_targets[j]).into())?);
    }
    let total = if parts.len() == 1 {
        parts[0]
    } else {
        let c = tape.concat_rows(&parts)?;
        tape.sum_all(c)
    };
    Ok(Some(tape.scale(total, 1.0 / held_out.len() as f64)))
}

/// Label targets for the rows that train the label head.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelTargets {
    pub kind: LabelKind,
    pub rows: Vec<usize>,
    /// Scaled values (regression) or class indices (classification).
    pub values: Vec<f64>,
}

/// Mean label loss over the training rows.
pub fn label_loss(
    tape: &mut Tape,
    params: &Bound<'_>,
    fwd: &Forward,
    n: usize,
    targets: &LabelTargets,
) -> Result<Var> {
    if targets.rows.is_empty() {
        return Err(Error::Data("no training labels".into()));
    }
    let imputed = fwd.imputed_matrix(tape, n)?;
    let rows = tape.gather_rows(imputed, targets.rows.clone().into())?;
    let out = label_head(tape, params, rows)?;
    let sum = match targets.kind {
        LabelKind::Regression => tape.squared_error_sum(out, targets.values.clone().into())?,
        LabelKind::Classification(_) => {
            let classes: Rc<[usize]> = targets.values.iter().map(|&v| v as usize).collect();
            tape.cross_entropy_sum(out, classes)?
        }
    };
    Ok(tape.scale(sum, 1.0 / targets.rows.len() as f64))
}

/// A trained model with its loss history.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLog>,
}

/// Scales the data, estimates sign gates, and builds the training graph.
pub fn prepare(dataset: &Dataset, config: &TrainConfig) -> Result<(Dataset, ScalerStats, Graph)> {
    let mut ds = dataset.clone();
    let stats = ds.fit_scaler()?;
    let signs = if config.ablate_interdependence {
        SignMatrix::zeros(ds.num_features())
    } else {
        pairwise_corr(ds.scaled(), ds.mask(), config.estimator)?.signs
    };
    let graph = build_graph(&ds, &signs, config.hyper.node_dim)?;
    Ok((ds, stats, graph))
}

fn label_setup(dataset: &Dataset, config: &TrainConfig) -> Result<Option<(LabelTargets, Option<(f64, f64)>)>> {
    if !config.label_task {
        return Ok(None);
    }
    let column = dataset
        .schema
        .label
        .as_ref()
        .ok_or_else(|| Error::Config("label task requested but the schema has no label".into()))?;
    let labels = dataset
        .labels
        .as_ref()
        .ok_or_else(|| Error::Data("label task requested but the data has no labels".into()))?;
    let rows: Vec<usize> = (0..labels.values.len()).filter(|&i| labels.observed[i]).collect();
    if rows.is_empty() {
        return Err(Error::Data("no training labels".into()));
    }
    let raw: Vec<f64> = rows.iter().map(|&i| labels.values[i]).collect();
    if let Some(k) = raw.iter().position(|y| !y.is_finite()) {
        return Err(Error::Data(format!("label of row {} is not finite", rows[k])));
    }
    Ok(Some(match column.kind {
        ColumnKind::Continuous => {
            let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let values = raw.iter().map(|&y| scale_label(y, (lo, hi))).collect();
            (
                LabelTargets {
                    kind: LabelKind::Regression,
                    rows,
                    values,
                },
                Some((lo, hi)),
            )
        }
        ColumnKind::Categorical => (
            LabelTargets {
                kind: LabelKind::Classification(column.num_categories()),
                rows,
                values: raw,
            },
            None,
        ),
    }))
}

fn scale_label(y: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        (y - lo) / (hi - lo)
    } else {
        0.0
    }
}

fn unscale_label(s: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        lo + s * (hi - lo)
    } else {
        lo
    }
}

/// Trains from scratch; see [`fit_with`].
pub fn fit(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    fit_with(dataset, config, |_| {})
}

/// Trains from scratch, calling `on_log` every `log_every` epochs.
///
/// Each epoch resamples edge, arc and attention drops, runs the forward
/// pass on what is retained, and takes one Adam step on the loss over the
/// dropped edges (plus the weighted label loss when enabled).
pub fn fit_with(
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_log: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    let hyper = &config.hyper;
    let (ds, scaler, graph) = prepare(dataset, config)?;
    let labels = label_setup(&ds, config)?;
    let label_kind = labels.as_ref().map(|(t, _)| t.kind);
    let mut params = ModelParams::init(
        hyper,
        &graph.categories,
        label_kind,
        &mut seeded_rng(derive_seed(config.seed, INIT_STREAM)),
    )?;
    let mut adam = AdamState::new(config.learning_rate, params.tensors.iter());
    let mut rng = seeded_rng(derive_seed(config.seed, DROP_STREAM));
    log::info!(
        "training on {} ({} epochs)",
        serde_json::to_string(&graph.stats())?,
        config.epochs
    );

    let start = Instant::now();
    let mut history = Vec::with_capacity(config.epochs);
    let mut warned_empty = false;
    for epoch in 1..=config.epochs {
        let masks = DropMasks::sample(
            &graph,
            config.edge_drop,
            config.arc_drop,
            config.attention_drop,
            hyper.layers,
            hyper.node_dim,
            &mut rng,
        );
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let fwd = forward(&mut tape, &graph, &bound, hyper, Some(&masks), true)?;
        let imp = imputation_loss(&mut tape, &fwd, &graph, &masks.held_out_edges)?;
        let lab = match &labels {
            Some((targets, _)) => Some(label_loss(&mut tape, &bound, &fwd, graph.num_obs, targets)?),
            None => None,
        };
        let imp_value = imp.map_or(0.0, |v| tape.value(v).data()[0]);
        let lab_value = lab.map(|v| tape.value(v).data()[0]);
        if !imp_value.is_finite() || lab_value.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite loss at epoch {epoch}: imputation {imp_value}, label {lab_value:?}"
            )));
        }
        let total = match (imp, lab) {
            (Some(a), Some(b)) => {
                let b = tape.scale(b, config.label_weight);
                Some(tape.add(a, b)?)
            }
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(tape.scale(b, config.label_weight)),
            (None, None) => None,
        };
        match total {
            Some(loss) => {
                let grads = tape.backward(loss)?;
                let g: Vec<Option<&Matrix>> = bound.vars.iter().map(|&v| grads.get(v)).collect();
                if g.iter().flatten().any(|m| !m.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite gradient at epoch {epoch}")));
                }
                let mut p: Vec<&mut Matrix> = params.tensors.iter_mut().collect();
                adam.step(&mut p, &g)?;
            }
            None if !warned_empty => {
                log::warn!("no held-out edges at epoch {epoch}; parameters left unchanged");
                warned_empty = true;
            }
            None => {}
        }
        let entry = EpochLog {
            epoch,
            imputation_loss: imp_value,
            label_loss: lab_value,
            wallclock: start.elapsed().as_secs_f64(),
        };
        if epoch % config.log_every.max(1) == 0 || epoch == config.epochs {
            on_log(&entry);
        }
        history.push(entry);
    }
    if !params.is_finite() {
        return Err(Error::Numeric("non-finite parameters after training".into()));
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            version: CHECKPOINT_VERSION,
            params,
            hyper: hyper.clone(),
            schema: ds.schema.clone(),
            scaler,
            signs: graph.signs.clone(),
            config: config.clone(),
            seed: config.seed,
            epoch: config.epochs,
            label_range: labels.and_then(|(_, r)| r),
        },
        history,
    })
}

/// Full-graph predictions for a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    /// `n x m` predictions in original units; categorical cells hold the
    /// argmax class index.
    pub values: Matrix,
    /// `n x m` predictions in scaled units, continuous cells clamped to
    /// `[0, 1]`.
    pub scaled: Matrix,
    /// Per feature, an `n x k` class distribution for categorical features.
    pub distributions: Vec<Option<Matrix>>,
    pub obs_embeddings: Matrix,
    pub feature_embeddings: Matrix,
    /// Label predictions in original units (class index for
    /// classification), when the model has a label head.
    pub labels: Option<Vec<f64>>,
    /// Class distributions of the label head.
    pub label_distributions: Option<Matrix>,
}

impl Inference {
    /// Observed cells keep their original values; missing cells are filled.
    pub fn filled(&self, dataset: &Dataset) -> Matrix {
        let mut out = self.values.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                if dataset.is_observed(r, c) {
                    out.set(r, c, dataset.raw().get(r, c));
                }
            }
        }
        out
    }
}

/// Runs the trained model on the whole graph of `dataset` without any
/// dropout, using the checkpoint's frozen scaler and sign gates.
pub fn impute(ckpt: &Checkpoint, dataset: &Dataset) -> Result<Inference> {
    ckpt.check_schema(dataset)?;
    let (n, m) = (dataset.num_rows(), dataset.num_features());
    let dn = ckpt.hyper.node_dim;
    if n == 0 {
        return Ok(Inference {
            values: Matrix::zeros(0, m),
            scaled: Matrix::zeros(0, m),
            distributions: ckpt
                .schema
                .category_counts()
                .iter()
                .map(|&k| (k > 0).then(|| Matrix::zeros(0, k)))
                .collect(),
            obs_embeddings: Matrix::zeros(0, dn),
            feature_embeddings: Matrix::zeros(m, dn),
            labels: ckpt.params.layout.label_head.as_ref().map(|_| Vec::new()),
            label_distributions: None,
        });
    }
    let mut ds = dataset.clone();
    ds.apply_scaler(&ckpt.scaler)?;
    let graph = build_graph(&ds, &ckpt.signs, dn)?;
    let mut tape = Tape::new();
    let bound = ckpt.params.bind(&mut tape);
    let fwd = forward(&mut tape, &graph, &bound, &ckpt.hyper, None, false)?;

    let mut scaled = Matrix::zeros(n, m);
    let mut distributions = Vec::with_capacity(m);
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let cont_cells: Vec<(usize, usize)> = cells
        .iter()
        .copied()
        .filter(|&(_, j)| graph.categories[j] == 0)
        .collect();
    if !cont_cells.is_empty() {
        let pred = fwd.predict_continuous(&mut tape, &cont_cells)?;
        for (k, &(i, j)) in cont_cells.iter().enumerate() {
            scaled.set(i, j, tape.value(pred).data()[k].clamp(0.0, 1.0));
        }
    }
    for j in 0..m {
        let Some(l) = fwd.logits(j) else {
            distributions.push(None);
            continue;
        };
        let logits = tape.value(l);
        let mut probs = Matrix::zeros(n, logits.cols());
        for i in 0..n {
            let p = softmax(logits.row(i));
            scaled.set(i, j, argmax(&p) as f64);
            probs.row_mut(i).copy_from_slice(&p);
        }
        distributions.push(Some(probs));
    }
    let values = ckpt.scaler.inverse_transform(&scaled);

    let (labels, label_distributions) = match (&ckpt.params.layout.label_kind, &ckpt.params.layout.label_head) {
        (Some(kind), Some(_)) => {
            let imputed = fwd.imputed_matrix(&mut tape, n)?;
            let out = label_head(&mut tape, &bound, imputed)?;
            let out = tape.value(out);
            match kind {
                LabelKind::Regression => {
                    let range = ckpt.label_range.unwrap_or((0.0, 1.0));
                    (Some(out.data().iter().map(|&s| unscale_label(s, range)).collect()), None)
                }
                LabelKind::Classification(k) => {
                    let mut probs = Matrix::zeros(n, *k);
                    let mut classes = Vec::with_capacity(n);
                    for i in 0..n {
                        let p = softmax(out.row(i));
                        classes.push(argmax(&p) as f64);
                        probs.row_mut(i).copy_from_slice(&p);
                    }
                    (Some(classes), Some(probs))
                }
            }
        }
        _ => (None, None),
    };

    Ok(Inference {
        values,
        scaled,
        distributions,
        obs_embeddings: tape.value(fwd.obs_emb).clone(),
        feature_embeddings: tape.value(fwd.feat_emb).clone(),
        labels,
        label_distributions,
    })
}

/// Imputes unseen observations with a trained model, no retraining.
///
/// New continuous values are scaled with the training statistics as is, so
/// inputs outside the training range map outside `[0, 1]`.
pub fn impute_new(ckpt: &Checkpoint, new_data: &Dataset) -> Result<Inference> {
    impute(ckpt, new_data)
}

/// First index of the largest entry.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
