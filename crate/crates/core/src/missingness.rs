//! Synthetic masking matrices under MCAR, MAR and MNAR.
//!
//! Every generator turns a per-cell missing probability `pi[k][i]` into a
//! mask by drawing one uniform per cell, column by column, from the stream
//! seeded with `MissSpec::seed`. Mechanism-specific random draws (the MAR
//! `w`, `b`, `m` and the MNAR `w`) come from a separate derived stream, so a
//! degenerate MAR or MNAR configuration reproduces the MCAR mask bit for
//! bit.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataio::Mask;
use crate::error::{Error, Result};
use crate::numcore::{derive_seed, seeded_rng, Matrix, Rng};

const MECHANISM_STREAM: u64 = 0x4d45_4348;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

impl std::str::FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcar" => Ok(Self::Mcar),
            "mar" => Ok(Self::Mar),
            "mnar" => Ok(Self::Mnar),
            other => Err(Error::Config(format!("unknown mechanism {other:?}"))),
        }
    }
}

/// Everything needed to regenerate a mask, including the drawn
/// mechanism parameters. Serialized as the JSON sidecar of a mask file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissSpec {
    pub mechanism: Mechanism,
    /// Target missing rate per feature.
    pub rates: Vec<f64>,
    pub seed: u64,
    /// MAR: slope per feature.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mar_weights: Vec<f64>,
    /// MAR: offset used when a feature is not a dependency.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mar_offsets: Vec<f64>,
    /// MAR: whether later features' missingness depends on this feature.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mar_dependency: Vec<bool>,
    /// MNAR: self-dependence weight per feature.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mnar_weights: Vec<f64>,
    /// Cells whose probability exceeded 1 and was clipped.
    #[serde(default)]
    pub clipped_cells: usize,
    /// Entries un-masked by the connectivity guard.
    #[serde(default)]
    pub guard_repairs: usize,
}

impl MissSpec {
    /// Spec with all mechanism parameters drawn from `seed` for `m` features.
    pub fn draw(mechanism: Mechanism, rates: Vec<f64>, seed: u64) -> Result<Self> {
        check_rates(&rates)?;
        let m = rates.len();
        let mut rng = seeded_rng(derive_seed(seed, MECHANISM_STREAM));
        let mut spec = Self {
            mechanism,
            rates,
            seed,
            mar_weights: Vec::new(),
            mar_offsets: Vec::new(),
            mar_dependency: Vec::new(),
            mnar_weights: Vec::new(),
            clipped_cells: 0,
            guard_repairs: 0,
        };
        match mechanism {
            Mechanism::Mcar => {}
            Mechanism::Mar => {
                spec.mar_weights = (0..m).map(|_| rng.random::<f64>()).collect();
                spec.mar_offsets = (0..m).map(|_| rng.random::<f64>()).collect();
                spec.mar_dependency = (0..m).map(|_| rng.random_bool(0.5)).collect();
            }
            Mechanism::Mnar => {
                spec.mnar_weights = (0..m).map(|_| rng.random::<f64>()).collect();
            }
        }
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

fn check_rates(rates: &[f64]) -> Result<()> {
    for (i, &p) in rates.iter().enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Config(format!(
                "missing rate {p} for feature {i} is outside (0, 1)"
            )));
        }
    }
    Ok(())
}

fn check_finite(d: &Matrix) -> Result<()> {
    if !d.is_finite() {
        return Err(Error::Data(
            "MAR/MNAR generation needs fully observed, finite data".into(),
        ));
    }
    Ok(())
}

/// Draws the mask from per-cell missing probabilities, column-major.
fn draw_mask(pi: &Matrix, seed: u64) -> Mask {
    let (n, m) = pi.shape();
    let mut rng: Rng = seeded_rng(seed);
    let mut mask = Mask::full(n, m);
    for i in 0..m {
        for k in 0..n {
            let u: f64 = rng.random();
            if u < pi.get(k, i) {
                mask.set(k, i, false);
            }
        }
    }
    mask
}

/// `p * n * exp(e_k) / sum_l exp(e_l)` for one column, clipped to [0, 1].
/// Returns the number of clipped cells.
fn softmax_probabilities(exponents: &[f64], p: f64, out: &mut [f64]) -> usize {
    let n = exponents.len() as f64;
    let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = exponents.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut clipped = 0;
    for (o, w) in out.iter_mut().zip(&weights) {
        let pi = p * (n * w / total);
        if pi > 1.0 {
            clipped += 1;
        }
        *o = pi.clamp(0.0, 1.0);
    }
    clipped
}

/// MCAR: each cell observed with probability `1 - rate`.
pub fn gen_mcar(n: usize, m: usize, rate: f64, seed: u64) -> Result<Mask> {
    let spec = MissSpec::draw(Mechanism::Mcar, vec![rate; m], seed)?;
    Ok(mcar_with(n, &spec))
}

fn mcar_with(n: usize, spec: &MissSpec) -> Mask {
    let m = spec.rates.len();
    let mut pi = Matrix::zeros(n, m);
    for k in 0..n {
        pi.row_mut(k).copy_from_slice(&spec.rates);
    }
    draw_mask(&pi, spec.seed)
}

/// MAR missing probabilities: feature `i` depends on features `j < i`
/// through `w_j m_j D_kj + b_j (1 - m_j)`; the first feature is MCAR.
pub fn mar_probabilities(d: &Matrix, spec: &MissSpec) -> Result<(Matrix, usize)> {
    check_finite(d)?;
    let (n, m) = d.shape();
    if spec.rates.len() != m || spec.mar_weights.len() != m {
        return Err(Error::Shape(format!(
            "MAR spec for {} features applied to {m} columns",
            spec.rates.len()
        )));
    }
    let mut pi = Matrix::zeros(n, m);
    let mut clipped = 0;
    let mut exponents = vec![0.0; n];
    let mut column = vec![0.0; n];
    for i in 0..m {
        if i == 0 {
            (0..n).for_each(|k| pi.set(k, 0, spec.rates[0]));
            continue;
        }
        let j = i - 1;
        // running sum over j < i
        for (k, e) in exponents.iter_mut().enumerate() {
            *e += if spec.mar_dependency[j] {
                spec.mar_weights[j] * d.get(k, j)
            } else {
                spec.mar_offsets[j]
            };
        }
        clipped += softmax_probabilities(&exponents, spec.rates[i], &mut column);
        for (k, v) in column.iter().enumerate() {
            pi.set(k, i, *v);
        }
    }
    Ok((pi, clipped))
}

/// MNAR missing probabilities: `p n exp(-w_i D_ki) / sum_l exp(-w_i D_li)`.
pub fn mnar_probabilities(d: &Matrix, spec: &MissSpec) -> Result<(Matrix, usize)> {
    check_finite(d)?;
    let (n, m) = d.shape();
    if spec.rates.len() != m || spec.mnar_weights.len() != m {
        return Err(Error::Shape(format!(
            "MNAR spec for {} features applied to {m} columns",
            spec.rates.len()
        )));
    }
    let mut pi = Matrix::zeros(n, m);
    let mut clipped = 0;
    let mut column = vec![0.0; n];
    for i in 0..m {
        let w = spec.mnar_weights[i];
        let exponents: Vec<f64> = (0..n).map(|k| -w * d.get(k, i)).collect();
        clipped += softmax_probabilities(&exponents, spec.rates[i], &mut column);
        for (k, v) in column.iter().enumerate() {
            pi.set(k, i, *v);
        }
    }
    Ok((pi, clipped))
}

/// MAR mask for fully observed `d`, whose features are scaled to [0, 1]
/// (columns processed in order).
pub fn gen_mar(d: &Matrix, rates: &[f64], seed: u64) -> Result<(Mask, MissSpec)> {
    let mut spec = MissSpec::draw(Mechanism::Mar, rates.to_vec(), seed)?;
    let mask = generate_with(d, &mut spec)?;
    Ok((mask, spec))
}

/// MNAR mask for fully observed `d`, whose features are scaled to [0, 1].
pub fn gen_mnar(d: &Matrix, rates: &[f64], seed: u64) -> Result<(Mask, MissSpec)> {
    let mut spec = MissSpec::draw(Mechanism::Mnar, rates.to_vec(), seed)?;
    let mask = generate_with(d, &mut spec)?;
    Ok((mask, spec))
}

/// Generates the mask described by an existing spec (its drawn parameters
/// are reused as-is). Records the number of clipped cells in the spec.
pub fn generate_with(d: &Matrix, spec: &mut MissSpec) -> Result<Mask> {
    check_rates(&spec.rates)?;
    let (pi, clipped) = match spec.mechanism {
        Mechanism::Mcar => {
            check_finite(d)?;
            return Ok(mcar_with(d.rows(), spec));
        }
        Mechanism::Mar => mar_probabilities(d, spec)?,
        Mechanism::Mnar => mnar_probabilities(d, spec)?,
    };
    if clipped > 0 {
        log::info!(
            "{:?}: clipped {clipped} missing probabilities to 1",
            spec.mechanism
        );
    }
    spec.clipped_cells = clipped;
    Ok(draw_mask(&pi, spec.seed))
}

/// Makes sure every row and every column keeps at least one observed cell
/// by un-masking a uniformly chosen entry where needed. Returns the number
/// of repairs.
pub fn connectivity_guard(mask: &mut Mask, seed: u64) -> usize {
    let (n, m) = (mask.rows(), mask.cols());
    let mut rng = seeded_rng(derive_seed(seed, 0x4755_4152));
    let mut repairs = 0;
    for c in 0..m {
        if n > 0 && mask.observed_in_column(c) == 0 {
            let r = rng.random_range(0..n);
            mask.set(r, c, true);
            log::info!("connectivity guard: un-masked ({r}, {c}) for empty column");
            repairs += 1;
        }
    }
    for r in 0..n {
        if m > 0 && (0..m).all(|c| !mask.get(r, c)) {
            let c = rng.random_range(0..m);
            mask.set(r, c, true);
            log::info!("connectivity guard: un-masked ({r}, {c}) for empty row");
            repairs += 1;
        }
    }
    repairs
}
