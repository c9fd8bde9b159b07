use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bcgnn::train::Checkpoint;
use tempfile::TempDir;

fn bcgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bcgnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = bcgnn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new(n: usize, m: usize) -> Self {
        let dir = TempDir::new().unwrap();
        let out = dir.path().join("synth");
        ok(&["synth", "--n", &n.to_string(), "--m", &m.to_string(), "--seed", "3", "--out", s(&out)]);
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn data(&self) -> PathBuf {
        self.path("synth/data.csv")
    }

    fn schema(&self) -> PathBuf {
        self.path("synth/schema.json")
    }

    fn mask(&self, rate: &str) -> PathBuf {
        let mask = self.path("mask.csv");
        ok(&[
            "genmask", "--data", s(&self.data()), "--schema", s(&self.schema()), "--mechanism", "mcar",
            "--rate", rate, "--seed", "1", "--out", s(&mask),
        ]);
        mask
    }

    fn train(&self, mask: &Path, extra: &[&str]) -> PathBuf {
        let ckpt = self.path("model.ckpt");
        let (data, schema) = (self.data(), self.schema());
        let mut args = vec![
            "train", "--data", s(&data), "--schema", s(&schema), "--mask", s(mask),
            "--out-checkpoint", s(&ckpt), "--epochs", "4",
        ];
        args.extend_from_slice(extra);
        ok(&args);
        ckpt
    }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn synth_is_deterministic() {
    let a = Fixture::new(30, 4);
    let b = Fixture::new(30, 4);
    assert_eq!(read(&a.data()), read(&b.data()));
    assert!(a.path("synth/truth.json").exists());
    assert_eq!(read(&a.data()).lines().count(), 31);
}

#[test]
fn genmask_writes_binary_mask_and_sidecar() {
    let f = Fixture::new(10, 4);
    let mask = f.mask("0.3");
    let text = read(&mask);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    for r in &rows {
        let cells: Vec<&str> = r.split(',').collect();
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().all(|c| *c == "0" || *c == "1"));
    }
    let again = f.mask("0.3");
    assert_eq!(text, read(&again));
    assert!(f.path("mask.csv.spec.json").exists());
}

#[test]
fn genmask_rejects_bad_input() {
    let f = Fixture::new(10, 4);
    let run = |mech: &str, rate: &str, data: &Path| {
        bcgnn(&[
            "genmask", "--data", s(data), "--schema", s(&f.schema()), "--mechanism", mech, "--rate", rate,
            "--out", s(&f.path("m.csv")),
        ])
        .status
        .code()
    };
    assert_eq!(run("mcar", "1.5", &f.data()), Some(2));
    assert_eq!(run("mcar", "abc", &f.data()), Some(2));
    // MAR needs fully observed data.
    let text = read(&f.data());
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut cells: Vec<&str> = lines[1].split(',').collect();
    cells[0] = "";
    lines[1] = cells.join(",");
    let holey = f.path("holey.csv");
    std::fs::write(&holey, lines.join("\n")).unwrap();
    assert_eq!(run("mar", "0.3", &holey), Some(3));
    assert_eq!(run("mcar", "0.3", &holey), Some(0));
}

#[test]
fn train_requires_schema() {
    let f = Fixture::new(10, 4);
    let out = bcgnn(&[
        "train", "--data", s(&f.data()), "--schema", s(&f.path("nope.json")), "--out-checkpoint",
        s(&f.path("c.ckpt")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn train_rejects_unknown_config_keys() {
    let f = Fixture::new(10, 4);
    let cfg = f.path("run.json");
    std::fs::write(&cfg, r#"{"train": {"epochz": 3}}"#).unwrap();
    let out = bcgnn(&[
        "train", "--config", s(&cfg), "--data", s(&f.data()), "--schema", s(&f.schema()), "--out-checkpoint",
        s(&f.path("c.ckpt")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_checkpoint_and_log() {
    let f = Fixture::new(30, 4);
    let mask = f.mask("0.3");
    let cfg = f.path("run.json");
    std::fs::write(&cfg, r#"{"train": {"log_every": 1, "hyper": {"node_dim": 16, "edge_dim": 16, "message_dim": 16}}}"#).unwrap();
    let ckpt = f.train(&mask, &["--config", s(&cfg)]);
    let log = read(&f.path("model.ckpt.log.jsonl"));
    assert_eq!(log.lines().count(), 4);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "imputation_loss", "label_loss", "wallclock"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    let c = Checkpoint::load(&ckpt).unwrap();
    assert_eq!(c.hyper.node_dim, 16);
    assert!(c.signs.active_pairs() > 0);
}

#[test]
fn train_draws_mask_from_config() {
    let f = Fixture::new(30, 4);
    let cfg = f.path("run.json");
    let body = format!(
        r#"{{"train": {{"epochs": 2}}, "missingness": {{"mechanism": "MAR", "rates": [0.3, 0.3, 0.3, 0.3], "seed": 4}},
            "paths": {{"data": "{}", "schema": "{}"}}}}"#,
        s(&f.data()),
        s(&f.schema())
    );
    std::fs::write(&cfg, body).unwrap();
    let ckpt = f.path("c.ckpt");
    ok(&["train", "--config", s(&cfg), "--out-checkpoint", s(&ckpt)]);
    assert!(Checkpoint::load(&ckpt).is_ok());
}

#[test]
fn ablation_flag_zeroes_signs() {
    let f = Fixture::new(30, 4);
    let mask = f.mask("0.3");
    let ckpt = f.train(&mask, &["--ablate-interdependence"]);
    assert_eq!(Checkpoint::load(&ckpt).unwrap().signs.active_pairs(), 0);
}

#[test]
fn impute_fills_missing_and_keeps_observed() {
    let f = Fixture::new(30, 4);
    let mask = f.mask("0.3");
    let ckpt = f.train(&mask, &[]);
    let out = f.path("imputed.csv");
    let data = f.data();
    let args = [
        "impute", "--checkpoint", s(&ckpt), "--data", s(&data), "--mask", s(&mask), "--out", s(&out),
    ];
    ok(&args);
    let imputed = read(&out);
    let first = imputed.clone();
    ok(&args);
    assert_eq!(first, read(&out));

    let truth = read(&f.data());
    let mask_text = read(&mask);
    for ((row, t), m) in imputed.lines().skip(1).zip(truth.lines().skip(1)).zip(mask_text.lines().skip(1)) {
        let cells: Vec<&str> = row.split(',').collect();
        let tcells: Vec<&str> = t.split(',').collect();
        assert_eq!(cells.len(), 4);
        for (j, bit) in m.split(',').enumerate() {
            assert!(!cells[j].is_empty());
            if bit == "1" {
                assert_eq!(cells[j], tcells[j]);
            }
        }
    }
}

#[test]
fn impute_new_rows_without_labels() {
    let f = Fixture::new(30, 4);
    let mask = f.mask("0.3");
    let ckpt = f.train(&mask, &[]);
    let data = read(&f.data());
    let new: Vec<String> = data
        .lines()
        .take(6)
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            let mut keep = cells[..4].to_vec();
            keep[1] = if keep[1] == "x1" { "x1" } else { "" };
            keep.join(",")
        })
        .collect();
    let path = f.path("new.csv");
    std::fs::write(&path, new.join("\n")).unwrap();
    let out = f.path("new_imputed.csv");
    ok(&["impute", "--checkpoint", s(&ckpt), "--data", s(&path), "--new-data", "--out", s(&out)]);
    let text = read(&out);
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().skip(1).all(|l| l.split(',').all(|c| !c.is_empty())));
}

#[test]
fn eval_reports() {
    let f = Fixture::new(30, 4);
    let mask = f.mask("0.3");
    let (data, schema) = (f.data(), f.schema());
    let eval = |imputed: &Path, extra: &[&str]| -> serde_json::Value {
        let mut args = vec![
            "eval", "--imputed", s(imputed), "--truth", s(&data), "--mask", s(&mask), "--schema",
            s(&schema),
        ];
        args.extend_from_slice(extra);
        serde_json::from_slice(&ok(&args).stdout).unwrap()
    };
    let perfect = eval(&f.data(), &[]);
    assert_eq!(perfect["mae"], 0.0);

    let mean = f.path("mean.csv");
    ok(&[
        "baseline", "--data", s(&f.data()), "--schema", s(&f.schema()), "--mask", s(&mask), "--method", "mean",
        "--out", s(&mean),
    ]);
    let r = eval(&mean, &[]);
    assert!((r["normalized_mae"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!(r["r_feature"].is_null());

    let ckpt = f.train(&mask, &[]);
    let r = eval(&mean, &["--checkpoint", s(&ckpt)]);
    assert!(r["r_feature"].as_f64().unwrap() >= 0.0);
    assert!(r["r_obs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn predict_scores_held_out_labels() {
    let f = Fixture::new(30, 4);
    let mask = f.mask("0.3");
    let ckpt = f.train(&mask, &["--label-task"]);
    let split = f.path("model.ckpt.split.json");
    assert!(split.exists());
    let preds = f.path("preds.csv");
    let out = ok(&[
        "predict", "--checkpoint", s(&ckpt), "--data", s(&f.data()), "--mask", s(&mask), "--split", s(&split),
        "--out", s(&preds),
    ]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["label_mae"].as_f64().unwrap() >= 0.0);
    assert!(report["label_baseline_mae"].as_f64().unwrap() >= 0.0);
    assert_eq!(read(&preds).lines().count(), 31);
}

#[test]
fn predict_without_label_head_is_config_error() {
    let f = Fixture::new(20, 4);
    let mask = f.mask("0.3");
    let ckpt = f.train(&mask, &[]);
    let out = bcgnn(&["predict", "--checkpoint", s(&ckpt), "--data", s(&f.data())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_checkpoint_is_data_error() {
    let f = Fixture::new(10, 4);
    let bad = f.path("bad.ckpt");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let out = bcgnn(&["impute", "--checkpoint", s(&bad), "--data", s(&f.data()), "--out", s(&f.path("o.csv"))]);
    assert_eq!(out.status.code(), Some(3));
}
