//! Tabular input: declared schema, CSV loading, masks, MinMax scaling and
//! label splits.
//!
//! Missing cells are stored as `NaN` in both the raw and the scaled matrix.
//! Anything that reads a masked position therefore produces a non-finite
//! value that the training loop and the tape reject.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{seeded_rng, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl Column {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Continuous,
            categories: Vec::new(),
        }
    }

    pub fn categorical(name: impl Into<String>, categories: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: categories.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == ColumnKind::Categorical
    }

    /// Number of classes; 0 for continuous columns.
    pub fn num_categories(&self) -> usize {
        match self.kind {
            ColumnKind::Continuous => 0,
            ColumnKind::Categorical => self.categories.len(),
        }
    }

    fn parse_cell(&self, cell: &str, row: usize) -> Result<f64> {
        let err = |message: String| Error::Parse {
            row,
            column: self.name.clone(),
            message,
        };
        match self.kind {
            ColumnKind::Continuous => {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| err(format!("{cell:?} is not a number")))?;
                if !v.is_finite() {
                    return Err(err(format!("{cell:?} is not finite")));
                }
                Ok(v)
            }
            ColumnKind::Categorical => self
                .categories
                .iter()
                .position(|c| c == cell)
                .map(|i| i as f64)
                .ok_or_else(|| err(format!("{cell:?} is not a declared category"))),
        }
    }

    fn format_cell(&self, v: f64) -> String {
        match self.kind {
            ColumnKind::Continuous => format!("{v}"),
            ColumnKind::Categorical => self.categories[v as usize].clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            ColumnKind::Continuous if !self.categories.is_empty() => Err(Error::Config(format!(
                "continuous column {:?} lists categories",
                self.name
            ))),
            ColumnKind::Categorical if self.categories.len() < 2 => Err(Error::Config(format!(
                "categorical column {:?} needs at least 2 categories",
                self.name
            ))),
            ColumnKind::Categorical => {
                let unique: HashSet<_> = self.categories.iter().collect();
                if unique.len() != self.categories.len() {
                    return Err(Error::Config(format!(
                        "categorical column {:?} repeats a category",
                        self.name
                    )));
                }
                Ok(())
            }
            ColumnKind::Continuous => Ok(()),
        }
    }
}

/// Declared column layout. Feature columns appear in CSV order; the
/// optional label column may sit anywhere in the file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub columns: Vec<Column>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Column>,
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let schema = Self {
            columns,
            label: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn with_label(mut self, label: Column) -> Result<Self> {
        self.label = Some(label);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Config("schema has no columns".into()));
        }
        let mut names = HashSet::new();
        for c in self.columns.iter().chain(self.label.iter()) {
            c.validate()?;
            if !names.insert(c.name.as_str()) {
                return Err(Error::Config(format!("duplicate column name {:?}", c.name)));
            }
        }
        Ok(())
    }

    pub fn num_features(&self) -> usize {
        self.columns.len()
    }

    /// Class counts per feature (0 = continuous).
    pub fn category_counts(&self) -> Vec<usize> {
        self.columns.iter().map(Column::num_categories).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Binary observation mask; `true` means observed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn from_bits(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} mask bits for a {rows}x{cols} mask",
                bits.len()
            )));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, observed: bool) {
        self.bits[r * self.cols + c] = observed;
    }

    pub fn count_observed(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn observed_in_column(&self, c: usize) -> usize {
        (0..self.rows).filter(|&r| self.get(r, c)).count()
    }

    pub fn missing_fraction_in_column(&self, c: usize) -> f64 {
        1.0 - self.observed_in_column(c) as f64 / self.rows as f64
    }

    /// Elementwise AND.
    pub fn intersect(&self, other: &Mask) -> Result<Mask> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Shape(format!(
                "mask {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Mask {
            rows: self.rows,
            cols: self.cols,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        })
    }

    /// Rows `idx` of this mask, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Mask {
        let mut bits = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            bits.extend_from_slice(&self.bits[r * self.cols..(r + 1) * self.cols]);
        }
        Mask {
            rows: idx.len(),
            cols: self.cols,
            bits,
        }
    }

    /// Writes the mask as CSV: a header of column names, then 0/1 cells.
    pub fn write_csv(&self, path: impl AsRef<Path>, names: &[String]) -> Result<()> {
        if names.len() != self.cols {
            return Err(Error::Shape(format!(
                "{} header names for {} mask columns",
                names.len(),
                self.cols
            )));
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(names)?;
        for r in 0..self.rows {
            w.write_record((0..self.cols).map(|c| if self.get(r, c) { "1" } else { "0" }))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::None)
            .from_path(path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let cols = header.len();
        let mut bits = Vec::new();
        let mut rows = 0;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != cols {
                return Err(Error::Data(format!(
                    "mask row {} has {} cells, expected {cols}",
                    i + 1,
                    rec.len()
                )));
            }
            for (c, cell) in rec.iter().enumerate() {
                bits.push(match cell {
                    "1" => true,
                    "0" => false,
                    other => {
                        return Err(Error::Parse {
                            row: i + 1,
                            column: header[c].clone(),
                            message: format!("mask cell {other:?} is not 0 or 1"),
                        })
                    }
                });
            }
            rows += 1;
        }
        Ok(Self { rows, cols, bits })
    }
}

/// Labels with their availability mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Labels {
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
}

/// Per-column MinMax statistics fit on observed entries only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    /// `Some((min, max))` for continuous columns.
    pub ranges: Vec<Option<(f64, f64)>>,
}

impl ScalerStats {
    /// Fits min/max on observed continuous entries.
    pub fn fit(dataset: &Dataset) -> Result<Self> {
        let mut ranges = Vec::with_capacity(dataset.num_features());
        for (c, col) in dataset.schema.columns.iter().enumerate() {
            if dataset.mask.observed_in_column(c) == 0 {
                return Err(Error::Data(format!(
                    "column {:?} has no observed entries",
                    col.name
                )));
            }
            if col.is_categorical() {
                ranges.push(None);
                continue;
            }
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for r in 0..dataset.num_rows() {
                if dataset.mask.get(r, c) {
                    let v = dataset.raw.get(r, c);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            ranges.push(Some((lo, hi)));
        }
        Ok(Self { ranges })
    }

    pub fn transform_value(&self, col: usize, x: f64) -> f64 {
        match self.ranges[col] {
            Some((lo, hi)) if hi > lo => (x - lo) / (hi - lo),
            Some(_) => 0.0,
            None => x,
        }
    }

    pub fn inverse_value(&self, col: usize, s: f64) -> f64 {
        match self.ranges[col] {
            Some((lo, hi)) if hi > lo => lo + s * (hi - lo),
            Some((lo, _)) => lo,
            None => s,
        }
    }

    /// Scales every finite entry; `NaN` (missing) passes through.
    pub fn transform(&self, raw: &Matrix) -> Matrix {
        let mut out = raw.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = self.transform_value(c, *v);
            }
        }
        out
    }

    pub fn inverse_transform(&self, scaled: &Matrix) -> Matrix {
        let mut out = scaled.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = self.inverse_value(c, *v);
            }
        }
        out
    }
}

/// A table with its mask, optional labels, and a scaled copy.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub schema: Schema,
    raw: Matrix,
    scaled: Matrix,
    mask: Mask,
    pub labels: Option<Labels>,
}

impl Dataset {
    /// Builds a dataset; entries where `mask` is 0 are replaced by `NaN`.
    /// The scaled copy starts as an unscaled copy until a scaler is applied.
    pub fn new(schema: Schema, raw: Matrix, mask: Mask, labels: Option<Labels>) -> Result<Self> {
        schema.validate()?;
        if raw.cols() != schema.num_features() || mask.cols() != raw.cols() || mask.rows() != raw.rows() {
            return Err(Error::Shape(format!(
                "data {}x{}, mask {}x{}, schema {} columns",
                raw.rows(),
                raw.cols(),
                mask.rows(),
                mask.cols(),
                schema.num_features()
            )));
        }
        if let Some(l) = &labels {
            if l.values.len() != raw.rows() || l.observed.len() != raw.rows() {
                return Err(Error::Shape(format!(
                    "{} labels for {} rows",
                    l.values.len(),
                    raw.rows()
                )));
            }
        }
        let mut raw = raw;
        let counts = schema.category_counts();
        for r in 0..raw.rows() {
            for c in 0..raw.cols() {
                if !mask.get(r, c) {
                    raw.set(r, c, f64::NAN);
                    continue;
                }
                let v = raw.get(r, c);
                if !v.is_finite() {
                    return Err(Error::Data(format!("non-finite observed value at ({r}, {c})")));
                }
                if counts[c] > 0 && (v < 0.0 || v.fract() != 0.0 || v as usize >= counts[c]) {
                    return Err(Error::Data(format!(
                        "category index {v} out of range at ({r}, {c})"
                    )));
                }
            }
        }
        let scaled = raw.clone();
        Ok(Self {
            schema,
            raw,
            scaled,
            mask,
            labels,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.raw.rows()
    }

    pub fn num_features(&self) -> usize {
        self.raw.cols()
    }

    pub fn raw(&self) -> &Matrix {
        &self.raw
    }

    pub fn scaled(&self) -> &Matrix {
        &self.scaled
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn is_observed(&self, r: usize, c: usize) -> bool {
        self.mask.get(r, c)
    }

    /// Fits MinMax statistics on this dataset and scales it.
    pub fn fit_scaler(&mut self) -> Result<ScalerStats> {
        let stats = ScalerStats::fit(self)?;
        self.apply_scaler(&stats)?;
        Ok(stats)
    }

    /// Scales with frozen statistics (no refit, no input clamping).
    pub fn apply_scaler(&mut self, stats: &ScalerStats) -> Result<()> {
        if stats.ranges.len() != self.num_features() {
            return Err(Error::Schema(format!(
                "scaler has {} columns, dataset has {}",
                stats.ranges.len(),
                self.num_features()
            )));
        }
        self.scaled = stats.transform(&self.raw);
        Ok(())
    }

    /// Hides additional cells: the new mask is `M AND hide`.
    pub fn apply_mask(&self, hide: &Mask) -> Result<Dataset> {
        let mask = self.mask.intersect(hide)?;
        let mut out = self.clone();
        for r in 0..out.num_rows() {
            for c in 0..out.num_features() {
                if !mask.get(r, c) {
                    out.raw.set(r, c, f64::NAN);
                    out.scaled.set(r, c, f64::NAN);
                }
            }
        }
        out.mask = mask;
        Ok(out)
    }

    /// A dataset made of the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        let pick = |m: &Matrix| {
            let mut data = Vec::with_capacity(idx.len() * m.cols());
            for &r in idx {
                data.extend_from_slice(m.row(r));
            }
            Matrix::from_vec(idx.len(), m.cols(), data).expect("row selection")
        };
        Dataset {
            schema: self.schema.clone(),
            raw: pick(&self.raw),
            scaled: pick(&self.scaled),
            mask: self.mask.select_rows(idx),
            labels: self.labels.as_ref().map(|l| Labels {
                values: idx.iter().map(|&r| l.values[r]).collect(),
                observed: idx.iter().map(|&r| l.observed[r]).collect(),
            }),
        }
    }

    /// Column names in order.
    pub fn column_names(&self) -> Vec<String> {
        self.schema.columns.iter().map(|c| c.name.clone()).collect()
    }
}

/// Reads a comma-separated UTF-8 file whose header matches `schema`.
/// Empty cells are missing; all other cells are parsed strictly (no
/// trimming).
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, schema)
}

pub fn parse_csv(text: &str, schema: &Schema) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    // A file without the label column (e.g. new rows to impute) is fine.
    let label_pos = schema
        .label
        .as_ref()
        .and_then(|l| header.iter().position(|h| *h == l.name));
    let feature_header: Vec<&String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_pos)
        .map(|(_, h)| h)
        .collect();
    let expected: Vec<&String> = schema.columns.iter().map(|c| &c.name).collect();
    if feature_header != expected {
        return Err(Error::Schema(format!(
            "header {header:?} does not match schema columns {expected:?}"
        )));
    }
    let m = schema.num_features();
    let width = header.len();
    let mut data = Vec::new();
    let mut bits = Vec::new();
    let mut label_values = Vec::new();
    let mut label_observed = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::Data(format!(
                "row {row} has {} cells, expected {width}",
                rec.len()
            )));
        }
        let mut feature = 0;
        for (pos, cell) in rec.iter().enumerate() {
            if Some(pos) == label_pos {
                let label = schema.label.as_ref().expect("label column");
                if cell.is_empty() {
                    label_values.push(f64::NAN);
                    label_observed.push(false);
                } else {
                    label_values.push(label.parse_cell(cell, row)?);
                    label_observed.push(true);
                }
                continue;
            }
            let col = &schema.columns[feature];
            if cell.is_empty() {
                data.push(f64::NAN);
                bits.push(false);
            } else {
                data.push(col.parse_cell(cell, row)?);
                bits.push(true);
            }
            feature += 1;
        }
    }
    let n = bits.len() / m;
    let labels = label_pos.map(|_| Labels {
        values: label_values,
        observed: label_observed,
    });
    Dataset::new(
        schema.clone(),
        Matrix::from_vec(n, m, data)?,
        Mask::from_bits(n, m, bits)?,
        labels,
    )
}

/// Writes a data CSV: categorical cells as category names, missing cells
/// as empty strings.
pub fn write_csv(
    path: impl AsRef<Path>,
    schema: &Schema,
    values: &Matrix,
    labels: Option<&Labels>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = schema.columns.iter().map(|c| c.name.clone()).collect();
    if let (Some(l), Some(_)) = (&schema.label, labels) {
        header.push(l.name.clone());
    }
    w.write_record(&header)?;
    for r in 0..values.rows() {
        let mut rec: Vec<String> = schema
            .columns
            .iter()
            .enumerate()
            .map(|(c, col)| {
                let v = values.get(r, c);
                if v.is_nan() {
                    String::new()
                } else {
                    col.format_cell(v)
                }
            })
            .collect();
        if let (Some(col), Some(l)) = (&schema.label, labels) {
            rec.push(if l.observed[r] {
                col.format_cell(l.values[r])
            } else {
                String::new()
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Chooses which labelled rows train the label head under a 7:3 split.
///
/// Returns a per-row mask; exactly `min(ceil(0.7 k), k - 1)` of the `k`
/// eligible rows are marked, uniformly at random under `seed`.
pub fn split_labels(eligible: &[bool], seed: u64) -> Result<Vec<bool>> {
    let idx: Vec<usize> = (0..eligible.len()).filter(|&i| eligible[i]).collect();
    let k = idx.len();
    if k < 2 {
        return Err(Error::Data(format!(
            "label split needs at least 2 labelled rows, found {k}"
        )));
    }
    let train = train_count(k);
    let mut shuffled = idx;
    shuffled.shuffle(&mut seeded_rng(seed));
    let mut out = vec![false; eligible.len()];
    for &i in &shuffled[..train] {
        out[i] = true;
    }
    Ok(out)
}

fn train_count(k: usize) -> usize {
    // ceil(0.7 k) in integer arithmetic
    let c = (7 * k).div_ceil(10);
    c.min(k - 1)
}
