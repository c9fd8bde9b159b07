//! Imputation metrics, the embedding-space size measure, and the Mean and
//! KNN baselines.

use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Mask};
use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// MAE over cells hidden by the evaluation mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    pub overall: f64,
    /// `None` for features with no hidden cells.
    pub per_feature: Vec<Option<f64>>,
    pub cells: usize,
}

/// Mean absolute error over cells with `mask == 0`.
///
/// Values are compared in scaled units. For categorical features
/// (`categories[j] > 0`) each cell contributes 0 when the predicted class
/// index equals the truth and 1 otherwise.
pub fn mae_missing(pred: &Matrix, truth: &Matrix, mask: &Mask, categories: &[usize]) -> Result<MaeReport> {
    if pred.shape() != truth.shape() || (mask.rows(), mask.cols()) != truth.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?}, truth {:?}, mask {}x{}",
            pred.shape(),
            truth.shape(),
            mask.rows(),
            mask.cols()
        )));
    }
    if categories.len() != truth.cols() {
        return Err(Error::Shape("category counts do not match the column count".into()));
    }
    let m = truth.cols();
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for i in 0..truth.rows() {
        for j in 0..m {
            if mask.get(i, j) {
                continue;
            }
            let (p, t) = (pred.get(i, j), truth.get(i, j));
            if !t.is_finite() {
                return Err(Error::Data(format!("no ground truth for hidden cell ({i}, {j})")));
            }
            sums[j] += if categories[j] > 0 {
                f64::from(u8::from(p.round() != t))
            } else {
                (p - t).abs()
            };
            counts[j] += 1;
        }
    }
    let cells: usize = counts.iter().sum();
    if cells == 0 {
        return Err(Error::Data("no missing entries to evaluate".into()));
    }
    Ok(MaeReport {
        overall: sums.iter().sum::<f64>() / cells as f64,
        per_feature: sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect(),
        cells,
    })
}

pub fn normalized_mae(method: f64, mean_baseline: f64) -> Result<f64> {
    if !(mean_baseline > 0.0) {
        return Err(Error::Numeric(format!(
            "baseline MAE must be positive, got {mean_baseline}"
        )));
    }
    Ok(method / mean_baseline)
}

/// `0.5 log2 det(I + k V V^T / (eps^2 d))` for `k x d` embeddings `V`,
/// evaluated through a Cholesky factor of the `k x k` Gram form.
pub fn embedding_space_size(v: &Matrix, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {eps}")));
    }
    let (k, d) = v.shape();
    if k == 0 || d == 0 {
        return Ok(0.0);
    }
    let c = k as f64 / (eps * eps * d as f64);
    let mut g = v.matmul(&v.transpose())?.scale(c);
    for i in 0..k {
        g.set(i, i, g.get(i, i) + 1.0);
    }
    let logdet = cholesky_logdet(&g)?;
    let r = 0.5 * logdet / std::f64::consts::LN_2;
    if !r.is_finite() {
        return Err(Error::Numeric("embedding space size is not finite".into()));
    }
    Ok(r.max(0.0))
}

/// `log det` of a symmetric positive definite matrix.
fn cholesky_logdet(a: &Matrix) -> Result<f64> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    let mut logdet = 0.0;
    for j in 0..n {
        let mut diag = a.get(j, j);
        for k in 0..j {
            diag -= l.get(j, k) * l.get(j, k);
        }
        if !(diag > 0.0) {
            return Err(Error::Numeric("matrix is not positive definite".into()));
        }
        let ljj = diag.sqrt();
        l.set(j, j, ljj);
        logdet += 2.0 * ljj.ln();
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(logdet)
}

fn column_fill(dataset: &Dataset, j: usize) -> Result<f64> {
    let d = dataset.scaled();
    let observed: Vec<f64> = (0..d.rows())
        .filter(|&i| dataset.is_observed(i, j))
        .map(|i| d.get(i, j))
        .collect();
    if observed.is_empty() {
        return Err(Error::Data(format!("column {j} has no observed entries")));
    }
    let k = dataset.schema.columns[j].num_categories();
    Ok(if k > 0 { mode(&observed, k) } else { mean(&observed) })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Most frequent class; ties go to the lowest index.
fn mode(v: &[f64], k: usize) -> f64 {
    let mut counts = vec![0usize; k];
    for &x in v {
        counts[x as usize] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best as f64
}

/// Fills missing cells with the observed column mean (continuous) or mode
/// (categorical). Works on the dataset's scaled values.
pub fn mean_impute(dataset: &Dataset) -> Result<Matrix> {
    let mut out = dataset.scaled().clone();
    for j in 0..dataset.num_features() {
        let fill = column_fill(dataset, j)?;
        for i in 0..out.rows() {
            if !dataset.is_observed(i, j) {
                out.set(i, j, fill);
            }
        }
    }
    Ok(out)
}

/// Mean squared difference over co-observed features, with categorical
/// features contributing a 0/1 mismatch. Infinite when nothing is
/// co-observed.
pub fn row_distance(dataset: &Dataset, a: usize, b: usize) -> f64 {
    let d = dataset.scaled();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (j, col) in dataset.schema.columns.iter().enumerate() {
        if !(dataset.is_observed(a, j) && dataset.is_observed(b, j)) {
            continue;
        }
        let (x, y) = (d.get(a, j), d.get(b, j));
        sum += if col.is_categorical() {
            f64::from(u8::from(x != y))
        } else {
            (x - y) * (x - y)
        };
        count += 1;
    }
    if count == 0 {
        f64::INFINITY
    } else {
        sum / count as f64
    }
}

/// Fills each missing cell from the `k` nearest rows that observe it,
/// averaging (continuous) or voting (categorical). Ties in distance are
/// broken by row index. Falls back to the column mean or mode when no
/// other row observes the cell.
pub fn knn_impute(dataset: &Dataset, k: usize) -> Result<Matrix> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let n = dataset.num_rows();
    let m = dataset.num_features();
    let d = dataset.scaled();
    let mut out = d.clone();
    let mut dist = vec![0.0; n];
    for i in 0..n {
        if (0..m).all(|j| dataset.is_observed(i, j)) {
            continue;
        }
        for (r, slot) in dist.iter_mut().enumerate() {
            *slot = if r == i { f64::INFINITY } else { row_distance(dataset, i, r) };
        }
        for j in 0..m {
            if dataset.is_observed(i, j) {
                continue;
            }
            let mut donors: Vec<usize> = (0..n).filter(|&r| r != i && dataset.is_observed(r, j)).collect();
            if donors.is_empty() {
                out.set(i, j, column_fill(dataset, j)?);
                continue;
            }
            donors.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
            donors.truncate(k);
            let values: Vec<f64> = donors.iter().map(|&r| d.get(r, j)).collect();
            let cats = dataset.schema.columns[j].num_categories();
            out.set(i, j, if cats > 0 { mode(&values, cats) } else { mean(&values) });
        }
    }
    Ok(out)
}

/// Summary of one evaluation run, serialized as JSON.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: Option<f64>,
    pub per_feature_mae: Vec<Option<f64>>,
    /// MAE in original units over continuous features.
    pub unscaled_mae: Option<f64>,
    pub mean_baseline_mae: Option<f64>,
    pub normalized_mae: Option<f64>,
    pub label_mae: Option<f64>,
    /// Label MAE of predicting the training-label mean.
    pub label_baseline_mae: Option<f64>,
    pub label_accuracy: Option<f64>,
    pub epsilon: Option<f64>,
    pub r_feature: Option<f64>,
    pub r_obs: Option<f64>,
    pub config: Option<serde_json::Value>,
}

/// MAE in original units over hidden continuous cells.
pub fn unscaled_mae(pred: &Matrix, truth: &Matrix, mask: &Mask, categories: &[usize]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..truth.rows() {
        for j in 0..truth.cols() {
            if !mask.get(i, j) && categories[j] == 0 {
                sum += (pred.get(i, j) - truth.get(i, j)).abs();
                count += 1;
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Mean absolute error between predicted and true labels on the selected
/// rows.
pub fn label_mae(pred: &[f64], truth: &[f64], rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Data("no rows to evaluate labels on".into()));
    }
    Ok(rows.iter().map(|&i| (pred[i] - truth[i]).abs()).sum::<f64>() / rows.len() as f64)
}

pub fn label_accuracy(pred: &[f64], truth: &[f64], rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Data("no rows to evaluate labels on".into()));
    }
    let hits = rows.iter().filter(|&&i| pred[i] == truth[i]).count();
    Ok(hits as f64 / rows.len() as f64)
}
