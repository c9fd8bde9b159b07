use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    /// Accumulators shaped like `params`, with the usual defaults
    /// (beta1 0.9, beta2 0.999, eps 1e-8).
    pub fn new<'a>(lr: f64, params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let (first, second): (Vec<_>, Vec<_>) = params
            .into_iter()
            .map(|p| (Matrix::zeros(p.rows(), p.cols()), Matrix::zeros(p.rows(), p.cols())))
            .unzip();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update in place. `grads[i]` pairs with `params[i]`; a
    /// `None` gradient is treated as zero.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Option<&Matrix>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, {} accumulators",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.shape() != self.first[i].shape() {
                return Err(Error::Shape(format!(
                    "adam: parameter {i} is {:?}, accumulator is {:?}",
                    p.shape(),
                    self.first[i].shape()
                )));
            }
            if let Some(g) = grads[i] {
                if g.shape() != p.shape() {
                    return Err(Error::Shape(format!(
                        "adam: gradient {i} is {:?}, parameter is {:?}",
                        g.shape(),
                        p.shape()
                    )));
                }
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let pd = p.data_mut();
            match grads[i] {
                Some(g) => {
                    for (k, &gk) in g.data().iter().enumerate() {
                        m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                        v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                        let mhat = m[k] / bc1;
                        let vhat = v[k] / bc2;
                        pd[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
                None => {
                    for k in 0..pd.len() {
                        m[k] *= self.beta1;
                        v[k] *= self.beta2;
                        let mhat = m[k] / bc1;
                        let vhat = v[k] / bc2;
                        pd[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
