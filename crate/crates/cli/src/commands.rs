use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use bcgnn::dataio::{load_csv, split_labels, write_csv};
use bcgnn::eval::{
    embedding_space_size, knn_impute, label_accuracy, label_mae, mae_missing, mean_impute, normalized_mae,
    unscaled_mae, EvalReport,
};
use bcgnn::missingness::{connectivity_guard, generate_with};
use bcgnn::synth::{generate, SynthConfig};
use bcgnn::train::{self, fit_with, Checkpoint, EpochLog, TrainConfig};
use bcgnn::{ColumnKind, Dataset, Error, Mask, Matrix, Mechanism, MissSpec, ScalerStats, Schema};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{
    with_suffix, BaselineArgs, BaselineMethod, CliError, CliResult, EvalArgs, GenmaskArgs, ImputeArgs,
    MechanismArg, PredictArgs, SynthArgs, TrainArgs,
};

/// Rows used to train and to score the label head.
#[derive(Debug, Serialize, Deserialize)]
struct LabelSplit {
    train: Vec<usize>,
    test: Vec<usize>,
}

fn parse_rates(text: &str, m: usize) -> CliResult<Vec<f64>> {
    let rates = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(format!("invalid rate {text:?}: {e}")))?;
    match rates.len() {
        1 => Ok(vec![rates[0]; m]),
        k if k == m => Ok(rates),
        k => Err(CliError::Usage(format!("{k} rates given for {m} features"))),
    }
}

/// Draws a mask for `data` under `spec`, then repairs empty rows/columns.
fn draw_mask(data: &Dataset, spec: &mut MissSpec) -> CliResult<Mask> {
    let (n, m) = (data.num_rows(), data.num_features());
    if spec.mechanism != Mechanism::Mcar && data.mask().count_observed() != n * m {
        return Err(Error::Data(format!(
            "{:?} masks need fully observed data; {} cells are empty",
            spec.mechanism,
            n * m - data.mask().count_observed()
        ))
        .into());
    }
    let input = match spec.mechanism {
        Mechanism::Mcar => Matrix::zeros(n, m),
        // MinMax-scaled inputs keep the softmax from saturating on skewed columns
        Mechanism::Mar | Mechanism::Mnar => {
            let mut scaled = data.clone();
            scaled.fit_scaler()?;
            scaled.scaled().clone()
        }
    };
    let mut mask = generate_with(&input, spec)?;
    spec.guard_repairs = connectivity_guard(&mut mask, spec.seed);
    Ok(mask)
}

pub fn genmask(a: GenmaskArgs) -> CliResult<()> {
    let schema = Schema::load(&a.schema)?;
    let data = load_csv(&a.data, &schema)?;
    let mechanism = match a.mechanism {
        MechanismArg::Mcar => Mechanism::Mcar,
        MechanismArg::Mar => Mechanism::Mar,
        MechanismArg::Mnar => Mechanism::Mnar,
    };
    let rates = parse_rates(&a.rate, schema.num_features())?;
    let mut spec = MissSpec::draw(mechanism, rates, a.seed)?;
    let mask = draw_mask(&data, &mut spec)?;
    mask.write_csv(&a.out, &data.column_names())?;
    spec.save(with_suffix(&a.out, ".spec.json"))?;
    Ok(())
}

fn required<'a>(value: &'a Option<std::path::PathBuf>, name: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing --{name} (or paths.{name} in the config)")))
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let mut rc = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if a.full {
        rc.train.epochs = TrainConfig::full().epochs;
    }
    let paths = &mut rc.paths;
    for (slot, flag) in [
        (&mut paths.data, &a.data),
        (&mut paths.schema, &a.schema),
        (&mut paths.mask, &a.mask),
        (&mut paths.checkpoint, &a.out_checkpoint),
        (&mut paths.log, &a.log),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Some(e) = a.epochs {
        rc.train.epochs = e;
    }
    if let Some(s) = a.seed {
        rc.train.seed = s;
    }
    rc.train.label_task |= a.label_task;
    rc.train.ablate_interdependence |= a.ablate_interdependence;

    let schema = Schema::load(required(&rc.paths.schema, "schema")?)?;
    let mut data = load_csv(required(&rc.paths.data, "data")?, &schema)?;
    let ckpt_path = required(&rc.paths.checkpoint, "out-checkpoint")?.to_path_buf();
    if let Some(mask) = &rc.paths.mask {
        data = data.apply_mask(&Mask::read_csv(mask)?)?;
    } else if let Some(spec) = &rc.missingness {
        // a hand-written spec may leave the mechanism parameters to be drawn
        let undrawn = match spec.mechanism {
            Mechanism::Mcar => false,
            Mechanism::Mar => spec.mar_weights.is_empty(),
            Mechanism::Mnar => spec.mnar_weights.is_empty(),
        };
        let mut spec = if undrawn {
            MissSpec::draw(spec.mechanism, spec.rates.clone(), spec.seed)?
        } else {
            spec.clone()
        };
        let mask = draw_mask(&data, &mut spec)?;
        data = data.apply_mask(&mask)?;
    }

    let mut split = None;
    if rc.train.label_task {
        let labels = data
            .labels
            .as_mut()
            .ok_or_else(|| Error::Data("label task requested but the data has no label column".into()))?;
        let train_rows = split_labels(&labels.observed, rc.train.seed)?;
        let test: Vec<usize> = (0..train_rows.len())
            .filter(|&i| labels.observed[i] && !train_rows[i])
            .collect();
        let train: Vec<usize> = (0..train_rows.len()).filter(|&i| train_rows[i]).collect();
        labels.observed = train_rows;
        split = Some(LabelSplit { train, test });
    }

    let log_path = rc
        .paths
        .log
        .clone()
        .unwrap_or_else(|| with_suffix(&ckpt_path, ".log.jsonl"));
    let mut log = BufWriter::new(File::create(&log_path).map_err(Error::from)?);
    let mut write_error = None;
    let outcome = fit_with(&data, &rc.train, |entry: &EpochLog| {
        if write_error.is_some() {
            return;
        }
        let line = serde_json::to_string(entry).expect("log entry serializes");
        if let Err(e) = writeln!(log, "{line}") {
            write_error = Some(e);
        }
        log::info!("{line}");
    })?;
    if let Some(e) = write_error {
        return Err(Error::from(e).into());
    }
    log.flush().map_err(Error::from)?;
    outcome.checkpoint.save(&ckpt_path)?;
    if let Some(split) = split {
        std::fs::write(
            with_suffix(&ckpt_path, ".split.json"),
            serde_json::to_string(&split).map_err(Error::from)?,
        )
        .map_err(Error::from)?;
    }
    Ok(())
}

fn load_for(ckpt: &Checkpoint, data: &Path, mask: Option<&Path>) -> CliResult<Dataset> {
    let mut ds = load_csv(data, &ckpt.schema)?;
    if let Some(mask) = mask {
        ds = ds.apply_mask(&Mask::read_csv(mask)?)?;
    }
    Ok(ds)
}

pub fn impute(a: ImputeArgs) -> CliResult<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let data = load_for(&ckpt, &a.data, a.mask.as_deref())?;
    let inf = if a.new_data {
        train::impute_new(&ckpt, &data)?
    } else {
        train::impute(&ckpt, &data)?
    };
    write_csv(&a.out, &ckpt.schema, &inf.filled(&data), None)?;
    if inf.distributions.iter().any(Option::is_some) {
        let path = a.distributions.unwrap_or_else(|| with_suffix(&a.out, ".dist.csv"));
        let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
        w.write_record(["row", "feature", "category", "probability"])
            .map_err(Error::from)?;
        for (j, dist) in inf.distributions.iter().enumerate() {
            let Some(dist) = dist else { continue };
            let col = &ckpt.schema.columns[j];
            for i in 0..dist.rows() {
                for (k, p) in dist.row(i).iter().enumerate() {
                    w.write_record([i.to_string(), col.name.clone(), col.categories[k].clone(), p.to_string()])
                        .map_err(Error::from)?;
                }
            }
        }
        w.flush().map_err(Error::from)?;
    }
    Ok(())
}

pub fn baseline(a: BaselineArgs) -> CliResult<()> {
    let schema = Schema::load(&a.schema)?;
    let mut data = load_csv(&a.data, &schema)?;
    if let Some(mask) = &a.mask {
        data = data.apply_mask(&Mask::read_csv(mask)?)?;
    }
    let scaler = data.fit_scaler()?;
    let scaled = match a.method {
        BaselineMethod::Mean => mean_impute(&data)?,
        BaselineMethod::Knn => knn_impute(&data, a.k)?,
    };
    let mut out = scaler.inverse_transform(&scaled);
    for i in 0..out.rows() {
        for j in 0..out.cols() {
            if data.is_observed(i, j) {
                out.set(i, j, data.raw().get(i, j));
            }
        }
    }
    write_csv(&a.out, &schema, &out, None)?;
    Ok(())
}

fn emit(report: &EvalReport, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(report).map_err(Error::from)?;
    match out {
        Some(p) => std::fs::write(p, text).map_err(Error::from)?,
        None => println!("{text}"),
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let schema = Schema::load(&a.schema)?;
    let truth = load_csv(&a.truth, &schema)?;
    let imputed = load_csv(&a.imputed, &schema)?;
    let mask = Mask::read_csv(&a.mask)?;
    if (mask.rows(), mask.cols()) != truth.raw().shape() || imputed.raw().shape() != truth.raw().shape() {
        return Err(Error::Shape(format!(
            "truth {:?}, imputed {:?}, mask {}x{}",
            truth.raw().shape(),
            imputed.raw().shape(),
            mask.rows(),
            mask.cols()
        ))
        .into());
    }
    if imputed.mask().count_observed() != truth.num_rows() * truth.num_features() {
        return Err(Error::Data("imputed table has empty cells".into()).into());
    }
    let observed = truth.apply_mask(&mask)?;
    let ckpt = a.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let scaler = match &ckpt {
        Some(c) => c.scaler.clone(),
        None => ScalerStats::fit(&observed)?,
    };
    let cats = schema.category_counts();
    let truth_scaled = scaler.transform(truth.raw());
    let mae = mae_missing(&scaler.transform(imputed.raw()), &truth_scaled, &mask, &cats)?;
    let mut obs_scaled = observed.clone();
    obs_scaled.apply_scaler(&scaler)?;
    let mean = mae_missing(&mean_impute(&obs_scaled)?, &truth_scaled, &mask, &cats)?.overall;

    let mut report = EvalReport {
        mae: Some(mae.overall),
        per_feature_mae: mae.per_feature.clone(),
        unscaled_mae: unscaled_mae(imputed.raw(), truth.raw(), &mask, &cats),
        mean_baseline_mae: Some(mean),
        normalized_mae: Some(normalized_mae(mae.overall, mean)?),
        config: Some(serde_json::json!({
            "imputed": a.imputed,
            "truth": a.truth,
            "mask": a.mask,
            "checkpoint": a.checkpoint,
        })),
        ..EvalReport::default()
    };
    if let Some(ckpt) = &ckpt {
        let inf = train::impute(ckpt, &observed)?;
        report.epsilon = Some(a.epsilon);
        report.r_feature = Some(embedding_space_size(&inf.feature_embeddings, a.epsilon)?);
        report.r_obs = Some(embedding_space_size(&inf.obs_embeddings, a.epsilon)?);
    }
    if let Some(path) = &a.per_feature_csv {
        let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
        w.write_record(["feature", "mae"]).map_err(Error::from)?;
        for (col, v) in schema.columns.iter().zip(&mae.per_feature) {
            w.write_record([col.name.clone(), v.map_or(String::new(), |x| x.to_string())])
                .map_err(Error::from)?;
        }
        w.flush().map_err(Error::from)?;
    }
    emit(&report, a.out.as_deref())
}

pub fn predict(a: PredictArgs) -> CliResult<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let data = load_for(&ckpt, &a.data, a.mask.as_deref())?;
    let inf = train::impute(&ckpt, &data)?;
    let preds = inf
        .labels
        .ok_or_else(|| Error::Config("checkpoint has no label head".into()))?;
    let label_col = ckpt.schema.label.as_ref();
    let format = |v: f64| match label_col {
        Some(c) if c.kind == ColumnKind::Categorical => c.categories[v as usize].clone(),
        _ => v.to_string(),
    };
    if let Some(out) = &a.out {
        let mut w = csv::Writer::from_path(out).map_err(Error::from)?;
        w.write_record(["row", "prediction"]).map_err(Error::from)?;
        for (i, &p) in preds.iter().enumerate() {
            w.write_record([i.to_string(), format(p)]).map_err(Error::from)?;
        }
        w.flush().map_err(Error::from)?;
    }

    let mut report = EvalReport::default();
    if let (Some(path), Some(labels)) = (&a.split, &data.labels) {
        let split: LabelSplit = serde_json::from_str(&std::fs::read_to_string(path).map_err(Error::from)?)
            .map_err(Error::from)?;
        if split.test.iter().chain(&split.train).any(|&i| i >= labels.values.len()) {
            return Err(Error::Shape("label split refers to rows beyond the data".into()).into());
        }
        match label_col.map(|c| c.kind) {
            Some(ColumnKind::Categorical) => {
                report.label_accuracy = Some(label_accuracy(&preds, &labels.values, &split.test)?);
            }
            _ => {
                report.label_mae = Some(label_mae(&preds, &labels.values, &split.test)?);
                let mean = split.train.iter().map(|&i| labels.values[i]).sum::<f64>() / split.train.len().max(1) as f64;
                report.label_baseline_mae = Some(label_mae(&vec![mean; labels.values.len()], &labels.values, &split.test)?);
            }
        }
    }
    emit(&report, None)
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let config = SynthConfig {
        n: a.n,
        m: a.m,
        seed: a.seed,
        independent: a.independent,
        categorical: a.categorical,
        noise: a.noise,
        ..SynthConfig::default()
    };
    let s = generate(&config)?;
    std::fs::create_dir_all(&a.out).map_err(Error::from)?;
    let ds = &s.dataset;
    write_csv(a.out.join("data.csv"), &ds.schema, ds.raw(), ds.labels.as_ref())?;
    ds.schema.save(a.out.join("schema.json"))?;
    std::fs::write(
        a.out.join("truth.json"),
        serde_json::to_string_pretty(&s.description).map_err(Error::from)?,
    )
    .map_err(Error::from)?;
    Ok(())
}
