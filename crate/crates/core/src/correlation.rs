//! Pairwise feature correlations under missingness and the sign gates
//! derived from them.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::Mask;
use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Correlations with magnitude below this are treated as no relationship.
pub const SIGN_THRESHOLD: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Spearman,
    Pearson,
    Kendall,
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spearman" => Ok(Self::Spearman),
            "pearson" => Ok(Self::Pearson),
            "kendall" => Ok(Self::Kendall),
            other => Err(Error::Config(format!("unknown estimator {other:?}"))),
        }
    }
}

/// Sign gates between features, `rho[w][v]` in {-1, 0, 1}, row-major m x m.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignMatrix {
    m: usize,
    signs: Vec<i8>,
}

impl SignMatrix {
    pub fn zeros(m: usize) -> Self {
        Self {
            m,
            signs: vec![0; m * m],
        }
    }

    pub fn from_signs(m: usize, signs: Vec<i8>) -> Result<Self> {
        if signs.len() != m * m || signs.iter().any(|s| !(-1..=1).contains(s)) {
            return Err(Error::Shape(format!("invalid {m}x{m} sign matrix")));
        }
        Ok(Self { m, signs })
    }

    pub fn size(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, w: usize, v: usize) -> i8 {
        self.signs[w * self.m + v]
    }

    pub fn set(&mut self, w: usize, v: usize, s: i8) {
        self.signs[w * self.m + v] = s;
    }

    /// Number of ordered pairs with a nonzero gate.
    pub fn active_pairs(&self) -> usize {
        (0..self.m)
            .flat_map(|w| (0..self.m).map(move |v| (w, v)))
            .filter(|&(w, v)| w != v && self.get(w, v) != 0)
            .count()
    }
}

/// Estimated coefficients, their sign gates and pairwise sample sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrMatrix {
    pub estimator: Estimator,
    /// `NaN` where the coefficient is undefined.
    pub coefficients: Matrix,
    pub signs: SignMatrix,
    pub pair_counts: Vec<usize>,
}

impl CorrMatrix {
    pub fn size(&self) -> usize {
        self.signs.size()
    }

    pub fn pair_count(&self, w: usize, v: usize) -> usize {
        self.pair_counts[w * self.size() + v]
    }

    /// CSV dump: header `feature_a,feature_b,coefficient,sign,pairs`.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("feature_a,feature_b,coefficient,sign,pairs\n");
        for w in 0..self.size() {
            for v in 0..self.size() {
                let s = self.coefficients.get(w, v);
                let coef = if s.is_nan() { String::new() } else { s.to_string() };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    names[w],
                    names[v],
                    coef,
                    self.signs.get(w, v),
                    self.pair_count(w, v)
                );
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, names: &[String]) -> Result<()> {
        fs::write(path, self.to_csv(names))?;
        Ok(())
    }
}

/// Ranks in `1..=n`; tied values share the mean of their rank range.
pub fn average_ranks(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Data("cannot rank an empty vector".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("cannot rank non-finite values".into()));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    Ok(ranks)
}

/// Product-moment correlation; `None` for fewer than 2 points or zero
/// variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman coefficient as the Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    pearson(&average_ranks(x).ok()?, &average_ranks(y).ok()?)
}

/// Kendall tau-b in O(n log n).
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let tied = |run: u64| run * run.saturating_sub(1) / 2;
    let (mut ties_x, mut ties_xy) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for k in 1..n {
        if pairs[k].0 == pairs[k - 1].0 {
            run_x += 1;
            if pairs[k].1 == pairs[k - 1].1 {
                run_xy += 1;
            } else {
                ties_xy += tied(run_xy);
                run_xy = 1;
            }
        } else {
            ties_x += tied(run_x);
            ties_xy += tied(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    ties_x += tied(run_x);
    ties_xy += tied(run_xy);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    let mut ties_y = 0u64;
    let mut run_y = 1u64;
    for k in 1..n {
        if ys[k] == ys[k - 1] {
            run_y += 1;
        } else {
            ties_y += tied(run_y);
            run_y = 1;
        }
    }
    ties_y += tied(run_y);

    let total = (n as u64) * (n as u64 - 1) / 2;
    let denom = ((total - ties_x) as f64 * (total - ties_y) as f64).sqrt();
    if denom == 0.0 {
        return None;
    }
    let numer = total as f64 - ties_x as f64 - ties_y as f64 + ties_xy as f64 - 2.0 * swaps as f64;
    Some((numer / denom).clamp(-1.0, 1.0))
}

/// Sorts `v` ascending and returns the number of strictly inverted pairs.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(left, bl) + merge_count(right, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

pub fn coefficient(x: &[f64], y: &[f64], estimator: Estimator) -> Option<f64> {
    match estimator {
        Estimator::Spearman => spearman(x, y),
        Estimator::Pearson => pearson(x, y),
        Estimator::Kendall => kendall_tau_b(x, y),
    }
}

/// Gate for one coefficient: 0 below the threshold or when undefined.
pub fn sign_indicator(s: f64) -> i8 {
    if s.is_nan() || s.abs() < SIGN_THRESHOLD {
        0
    } else if s > 0.0 {
        1
    } else {
        -1
    }
}

/// Pairwise-complete correlation of every feature pair: each pair uses only
/// rows where both features are observed.
pub fn pairwise_corr(d: &Matrix, mask: &Mask, estimator: Estimator) -> Result<CorrMatrix> {
    let (n, m) = d.shape();
    if (mask.rows(), mask.cols()) != (n, m) {
        return Err(Error::Shape(format!(
            "data {n}x{m} vs mask {}x{}",
            mask.rows(),
            mask.cols()
        )));
    }
    let mut coefficients = Matrix::filled(m, m, f64::NAN);
    let mut signs = SignMatrix::zeros(m);
    let mut pair_counts = vec![0; m * m];
    let (mut xs, mut ys) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for w in 0..m {
        for v in w..m {
            xs.clear();
            ys.clear();
            for k in 0..n {
                if mask.get(k, w) && mask.get(k, v) {
                    xs.push(d.get(k, w));
                    ys.push(d.get(k, v));
                }
            }
            pair_counts[w * m + v] = xs.len();
            pair_counts[v * m + w] = xs.len();
            let s = coefficient(&xs, &ys, estimator);
            if s.is_none() && w != v {
                log::debug!(
                    "features {w} and {v}: correlation undefined on {} complete rows",
                    xs.len()
                );
            }
            let s = s.unwrap_or(f64::NAN);
            coefficients.set(w, v, s);
            coefficients.set(v, w, s);
            if w != v {
                let g = sign_indicator(s);
                signs.set(w, v, g);
                signs.set(v, w, g);
            }
        }
    }
    Ok(CorrMatrix {
        estimator,
        coefficients,
        signs,
        pair_counts,
    })
}
