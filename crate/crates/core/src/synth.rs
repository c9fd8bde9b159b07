//! Synthetic tabular benchmark with planted monotone dependencies.
//!
//! Each feature is a monotone transform of `loading * z + noise`, where `z`
//! is a latent factor shared by all features. In independent mode every
//! feature gets its own latent draw instead, so no dependency is planted.
//! The label is a linear function of the standardized features plus noise.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{Column, Dataset, Labels, Mask, Schema};
use crate::error::{Error, Result};
use crate::numcore::{seeded_rng, Matrix, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub independent: bool,
    /// Standard deviation of the per-feature noise.
    pub noise: f64,
    /// Number of trailing features turned into 3-class ordinal columns.
    pub categorical: usize,
    pub label_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 500,
            m: 8,
            seed: 0,
            independent: false,
            noise: 0.5,
            categorical: 0,
            label_noise: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    Exp,
    Cubic,
    Tanh,
    Logistic,
    Asinh,
}

impl Transform {
    const ALL: [Transform; 6] = [
        Transform::Identity,
        Transform::Exp,
        Transform::Cubic,
        Transform::Tanh,
        Transform::Logistic,
        Transform::Asinh,
    ];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Exp => (0.5 * x).exp(),
            Transform::Cubic => x * x * x / 3.0 + x,
            Transform::Tanh => 2.0 * x.tanh(),
            Transform::Logistic => 4.0 / (1.0 + (-x).exp()),
            Transform::Asinh => x.asinh(),
        }
    }
}

/// Ground truth of a generated table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthDescription {
    pub config: SynthConfig,
    pub loadings: Vec<f64>,
    pub transforms: Vec<Transform>,
    pub label_weights: Vec<f64>,
    /// Pairs whose dependency was planted through the shared latent factor.
    pub planted_pairs: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    /// Fully observed data with labels.
    pub dataset: Dataset,
    pub description: SynthDescription,
}

fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn generate(config: &SynthConfig) -> Result<Synthetic> {
    let SynthConfig { n, m, .. } = *config;
    if n < 2 || m < 2 {
        return Err(Error::Config(format!("need n >= 2 and m >= 2, got {n} x {m}")));
    }
    if config.categorical > m {
        return Err(Error::Config("more categorical columns than features".into()));
    }
    if !(config.noise >= 0.0 && config.label_noise >= 0.0) {
        return Err(Error::Config("noise levels must be non-negative".into()));
    }
    let mut rng = seeded_rng(config.seed);
    let loadings: Vec<f64> = (0..m)
        .map(|j| {
            let mag = rng.random_range(0.7..1.3);
            if j % 3 == 2 { -mag } else { mag }
        })
        .collect();
    let transforms: Vec<Transform> = (0..m).map(|j| Transform::ALL[j % Transform::ALL.len()]).collect();
    let label_weights: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut pre = Matrix::zeros(n, m);
    for i in 0..n {
        let z = normal(&mut rng);
        for j in 0..m {
            let latent = if config.independent { normal(&mut rng) } else { z };
            let e = normal(&mut rng);
            pre.set(i, j, loadings[j] * latent + config.noise * e);
        }
    }

    let first_cat = m - config.categorical;
    let mut data = Matrix::zeros(n, m);
    for j in 0..m {
        if j >= first_cat {
            let mut col: Vec<f64> = (0..n).map(|i| pre.get(i, j)).collect();
            col.sort_by(f64::total_cmp);
            let (t1, t2) = (col[n / 3], col[2 * n / 3]);
            for i in 0..n {
                let x = pre.get(i, j);
                data.set(i, j, if x < t1 { 0.0 } else if x < t2 { 1.0 } else { 2.0 });
            }
        } else {
            for i in 0..n {
                data.set(i, j, transforms[j].apply(pre.get(i, j)));
            }
        }
    }

    let (means, sds): (Vec<f64>, Vec<f64>) = (0..m)
        .map(|j| {
            let mu = (0..n).map(|i| data.get(i, j)).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (data.get(i, j) - mu).powi(2)).sum::<f64>() / n as f64;
            (mu, var.sqrt().max(1e-12))
        })
        .unzip();
    let labels: Vec<f64> = (0..n)
        .map(|i| {
            let lin: f64 = (0..m)
                .map(|j| label_weights[j] * (data.get(i, j) - means[j]) / sds[j])
                .sum();
            lin + config.label_noise * normal(&mut rng)
        })
        .collect();

    let columns = (0..m)
        .map(|j| {
            if j >= first_cat {
                Column::categorical(format!("x{j}"), &["low", "mid", "high"])
            } else {
                Column::continuous(format!("x{j}"))
            }
        })
        .collect();
    let schema = Schema::new(columns)?.with_label(Column::continuous("y"))?;
    let dataset = Dataset::new(
        schema,
        data,
        Mask::full(n, m),
        Some(Labels {
            values: labels,
            observed: vec![true; n],
        }),
    )?;
    let planted_pairs = if config.independent {
        Vec::new()
    } else {
        (0..m).flat_map(|w| (w + 1..m).map(move |v| (w, v))).collect()
    };
    Ok(Synthetic {
        dataset,
        description: SynthDescription {
            config: config.clone(),
            loadings,
            transforms,
            label_weights,
            planted_pairs,
        },
    })
}
