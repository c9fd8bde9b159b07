//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in execution order, so node indices
//! are already a topological order and [`Tape::backward`] is a single
//! reverse sweep. Tapes are cheap to build and are rebuilt for every
//! training step.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::matrix::{gemm_acc, Matrix, Op as Gemm};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Identity,
}

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Elementwise activation of a plain matrix.
pub fn activation(x: &Matrix, kind: Activation) -> Matrix {
    x.map(|v| kind.apply(v))
}

/// Numerically stable softmax of a vector (max-subtracted).
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Pooling used when several messages arrive at one node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduce {
    Mean,
    Sum,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Rc<Matrix>),
    RowScale(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    GatherRows(Var, Rc<[usize]>),
    Pick(Var, Rc<[usize]>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Segment {
        src: Var,
        targets: Rc<[usize]>,
        kind: Reduce,
        // Mean: per-target counts. Max: per output cell, the winning source row.
        counts: Vec<usize>,
        argmax: Vec<usize>,
    },
    SoftmaxRows(Var),
    SumAll(Var),
    SquaredErrorSum(Var, Rc<[f64]>),
    CrossEntropySum {
        logits: Var,
        targets: Rc<[usize]>,
        probs: Matrix,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// influence the loss or was recorded as a constant.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

const NO_SOURCE: usize = usize::MAX;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(row));
        if bm.rows() != 1 || bm.cols() != am.cols() {
            return Err(Error::Shape(format!(
                "add_row: {}x{} plus row {}x{}",
                am.rows(),
                am.cols(),
                bm.rows(),
                bm.cols()
            )));
        }
        let mut value = am.clone();
        let b = bm.data().to_vec();
        for r in 0..value.rows() {
            for (x, y) in value.row_mut(r).iter_mut().zip(&b) {
                *x += y;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(value, Op::AddRow(a, row), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// Elementwise product with a fixed matrix.
    pub fn mul_const(&mut self, a: Var, c: Rc<Matrix>) -> Result<Var> {
        let value = self.value(a).hadamard(&c)?;
        let ng = self.needs(a);
        Ok(self.push(value, Op::MulConst(a, c), ng))
    }

    /// Scales row `i` of `a` by `s[i]`, where `s` is a column vector.
    pub fn row_scale(&mut self, a: Var, s: Var) -> Result<Var> {
        let (am, sm) = (self.value(a), self.value(s));
        if sm.cols() != 1 || sm.rows() != am.rows() {
            return Err(Error::Shape(format!(
                "row_scale: {}x{} by {}x{}",
                am.rows(),
                am.cols(),
                sm.rows(),
                sm.cols()
            )));
        }
        let mut value = am.clone();
        for r in 0..value.rows() {
            let k = sm.data()[r];
            value.row_mut(r).iter_mut().for_each(|x| *x *= k);
        }
        let ng = self.needs(a) || self.needs(s);
        Ok(self.push(value, Op::RowScale(a, s), ng))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).scale(k);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, k), ng)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let value = activation(self.value(a), kind);
        let ng = self.needs(a);
        self.push(value, Op::Act(a, kind), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    /// Selects rows of `a` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Result<Var> {
        let am = self.value(a);
        let mut value = Matrix::zeros(idx.len(), am.cols());
        for (o, &i) in idx.iter().enumerate() {
            if i >= am.rows() {
                return Err(Error::Shape(format!(
                    "gather_rows: index {i} out of range for {} rows",
                    am.rows()
                )));
            }
            value.row_mut(o).copy_from_slice(am.row(i));
        }
        let ng = self.needs(a);
        Ok(self.push(value, Op::GatherRows(a, idx), ng))
    }

    /// Column vector of the entries of `a` at the given row-major offsets.
    pub fn pick(&mut self, a: Var, idx: Rc<[usize]>) -> Result<Var> {
        let am = self.value(a);
        let mut data = Vec::with_capacity(idx.len());
        for &i in idx.iter() {
            if i >= am.len() {
                return Err(Error::Shape(format!(
                    "pick: offset {i} out of range for {} entries",
                    am.len()
                )));
            }
            data.push(am.data()[i]);
        }
        let value = Matrix::from_vec(idx.len(), 1, data)?;
        let ng = self.needs(a);
        Ok(self.push(value, Op::Pick(a, idx), ng))
    }

    /// Rows `start..start+len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let am = self.value(a);
        if start + len > am.rows() {
            return Err(Error::Shape(format!(
                "slice_rows: {start}..{} of {} rows",
                start + len,
                am.rows()
            )));
        }
        let value = Matrix::from_vec(
            len,
            am.cols(),
            am.data()[start * am.cols()..(start + len) * am.cols()].to_vec(),
        )?;
        let ng = self.needs(a);
        Ok(self.push(value, Op::SliceRows(a, start), ng))
    }

    /// Stacks matrices vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pm = self.value(p);
            if pm.cols() != cols {
                return Err(Error::Shape(format!(
                    "concat_rows: width {} vs {cols}",
                    pm.cols()
                )));
            }
            rows += pm.rows();
            data.extend_from_slice(pm.data());
        }
        let value = Matrix::from_vec(rows, cols, data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Joins matrices side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let mut cols = 0;
        for &p in parts {
            let pm = self.value(p);
            if pm.rows() != rows {
                return Err(Error::Shape(format!(
                    "concat_cols: height {} vs {rows}",
                    pm.rows()
                )));
            }
            cols += pm.cols();
        }
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pm = self.value(p);
            for r in 0..rows {
                value.row_mut(r)[offset..offset + pm.cols()].copy_from_slice(pm.row(r));
            }
            offset += pm.cols();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Pools rows of `src` into `num_targets` output rows; row `k` of `src`
    /// goes to output row `targets[k]`. Targets receiving nothing get zeros.
    pub fn segment_reduce(
        &mut self,
        src: Var,
        targets: Rc<[usize]>,
        num_targets: usize,
        kind: Reduce,
    ) -> Result<Var> {
        let sm = self.value(src);
        if targets.len() != sm.rows() {
            return Err(Error::Shape(format!(
                "segment_reduce: {} targets for {} rows",
                targets.len(),
                sm.rows()
            )));
        }
        let width = sm.cols();
        let mut value = Matrix::zeros(num_targets, width);
        let mut counts = vec![0usize; num_targets];
        let mut argmax = Vec::new();
        for &t in targets.iter() {
            if t >= num_targets {
                return Err(Error::Shape(format!(
                    "segment_reduce: target {t} out of range {num_targets}"
                )));
            }
            counts[t] += 1;
        }
        match kind {
            Reduce::Sum | Reduce::Mean => {
                // Rows are added in a canonical order so the result depends
                // only on the multiset of rows reaching each target.
                let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); num_targets];
                for (k, &t) in targets.iter().enumerate() {
                    buckets[t].push(k);
                }
                for (t, bucket) in buckets.iter_mut().enumerate() {
                    bucket.sort_by(|&a, &b| {
                        sm.row(a)
                            .iter()
                            .zip(sm.row(b))
                            .map(|(x, y)| x.total_cmp(y))
                            .find(|o| o.is_ne())
                            .unwrap_or(std::cmp::Ordering::Equal)
                    });
                    let out = value.row_mut(t);
                    for &k in bucket.iter() {
                        for (o, s) in out.iter_mut().zip(sm.row(k)) {
                            *o += s;
                        }
                    }
                }
                if kind == Reduce::Mean {
                    for (t, &c) in counts.iter().enumerate() {
                        if c > 0 {
                            let inv = 1.0 / c as f64;
                            value.row_mut(t).iter_mut().for_each(|x| *x *= inv);
                        }
                    }
                }
            }
            Reduce::Max => {
                argmax = vec![NO_SOURCE; num_targets * width];
                for (k, &t) in targets.iter().enumerate() {
                    let src_row = sm.row(k);
                    for c in 0..width {
                        let slot = t * width + c;
                        if argmax[slot] == NO_SOURCE || src_row[c] > value.data()[slot] {
                            argmax[slot] = k;
                            value.data_mut()[slot] = src_row[c];
                        }
                    }
                }
            }
        }
        let ng = self.needs(src);
        Ok(self.push(
            value,
            Op::Segment {
                src,
                targets,
                kind,
                counts,
                argmax,
            },
            ng,
        ))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        let ng = self.needs(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::SumAll(a), ng)
    }

    /// `sum_i (a_i - target_i)^2` for a column vector `a`.
    pub fn squared_error_sum(&mut self, a: Var, targets: Rc<[f64]>) -> Result<Var> {
        let am = self.value(a);
        if am.len() != targets.len() {
            return Err(Error::Shape(format!(
                "squared_error_sum: {} predictions for {} targets",
                am.len(),
                targets.len()
            )));
        }
        let total: f64 = am
            .data()
            .iter()
            .zip(targets.iter())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let ng = self.needs(a);
        Ok(self.push(Matrix::scalar(total), Op::SquaredErrorSum(a, targets), ng))
    }

    /// Summed cross-entropy of row-wise softmax(logits) against class indices.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: Rc<[usize]>) -> Result<Var> {
        let lm = self.value(logits);
        if lm.rows() != targets.len() {
            return Err(Error::Shape(format!(
                "cross_entropy_sum: {} rows for {} targets",
                lm.rows(),
                targets.len()
            )));
        }
        let mut probs = lm.clone();
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= lm.cols() {
                return Err(Error::Shape(format!(
                    "cross_entropy_sum: class {t} out of range {}",
                    lm.cols()
                )));
            }
            let row = lm.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
            softmax_in_place(probs.row_mut(r));
        }
        let ng = self.needs(logits);
        Ok(self.push(
            Matrix::scalar(total),
            Op::CrossEntropySum {
                logits,
                targets,
                probs,
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar node. Gradients start at zero on every
    /// call; nothing is accumulated across calls.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, found {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, delta: Matrix) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    /// Returns the accumulator for `v`, creating a zero matrix of the right
    /// shape when needed. `None` when `v` takes no gradient.
    fn slot<'g>(&self, grads: &'g mut [Option<Matrix>], v: Var) -> Option<&'g mut Matrix> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let (r, c) = self.nodes[v.0].value.shape();
        Some(grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c)))
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    gemm_acc(Gemm::N, g, Gemm::T, &self.nodes[b.0].value, ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm_acc(Gemm::T, &self.nodes[a.0].value, Gemm::N, g, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if let Some(gr) = self.slot(grads, *row) {
                    for r in 0..g.rows() {
                        for (x, y) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, g.hadamard(bv).expect("shape"));
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, g.hadamard(av).expect("shape"));
                }
            }
            Op::MulConst(a, c) => {
                self.accumulate(grads, *a, g.hadamard(c).expect("shape"));
            }
            Op::RowScale(a, s) => {
                let av = &self.nodes[a.0].value;
                let sv = &self.nodes[s.0].value;
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..g.rows() {
                        let k = sv.data()[r];
                        for (x, y) in ga.row_mut(r).iter_mut().zip(g.row(r)) {
                            *x += k * y;
                        }
                    }
                }
                if let Some(gs) = self.slot(grads, *s) {
                    for r in 0..g.rows() {
                        let dot: f64 = g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum();
                        gs.data_mut()[r] += dot;
                    }
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g.scale(*k)),
            Op::Act(a, kind) => {
                let x = &self.nodes[a.0].value;
                let mut d = g.clone();
                for (gi, xi) in d.data_mut().iter_mut().zip(x.data()) {
                    *gi *= kind.derivative(*xi);
                }
                self.accumulate(grads, *a, d);
            }
            Op::GatherRows(a, idx) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (o, &i) in idx.iter().enumerate() {
                        for (x, y) in ga.row_mut(i).iter_mut().zip(g.row(o)) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Pick(a, idx) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let d = ga.data_mut();
                    for (&i, y) in idx.iter().zip(g.data()) {
                        d[i] += y;
                    }
                }
            }
            Op::SliceRows(a, start) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let w = g.cols();
                    for (x, y) in ga.data_mut()[start * w..start * w + g.len()]
                        .iter_mut()
                        .zip(g.data())
                    {
                        *x += y;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let w = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    if let Some(gp) = self.slot(grads, p) {
                        for (x, y) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + len])
                        {
                            *x += y;
                        }
                    }
                    offset += len;
                    debug_assert_eq!(len % w.max(1), 0);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.nodes[p.0].value.cols();
                    if let Some(gp) = self.slot(grads, p) {
                        for r in 0..g.rows() {
                            for (x, y) in gp
                                .row_mut(r)
                                .iter_mut()
                                .zip(&g.row(r)[offset..offset + pc])
                            {
                                *x += y;
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::Segment {
                src,
                targets,
                kind,
                counts,
                argmax,
            } => {
                let Some(gs) = self.slot(grads, *src) else {
                    return;
                };
                let width = g.cols();
                match kind {
                    Reduce::Sum | Reduce::Mean => {
                        for (k, &t) in targets.iter().enumerate() {
                            let scale = if *kind == Reduce::Mean {
                                1.0 / counts[t] as f64
                            } else {
                                1.0
                            };
                            for (x, y) in gs.row_mut(k).iter_mut().zip(g.row(t)) {
                                *x += scale * y;
                            }
                        }
                    }
                    Reduce::Max => {
                        for (slot, &k) in argmax.iter().enumerate() {
                            if k != NO_SOURCE {
                                let c = slot % width;
                                gs.data_mut()[k * width + c] += g.data()[slot];
                            }
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (c, out) in d.row_mut(r).iter_mut().enumerate() {
                        *out = yr[c] * (gr[c] - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::SumAll(a) => {
                let (r, c) = self.nodes[a.0].value.shape();
                self.accumulate(grads, *a, Matrix::filled(r, c, g.data()[0]));
            }
            Op::SquaredErrorSum(a, targets) => {
                let av = &self.nodes[a.0].value;
                let k = g.data()[0];
                let data = av
                    .data()
                    .iter()
                    .zip(targets.iter())
                    .map(|(p, t)| 2.0 * (p - t) * k)
                    .collect();
                let d = Matrix::from_vec(av.rows(), av.cols(), data).expect("shape");
                self.accumulate(grads, *a, d);
            }
            Op::CrossEntropySum {
                logits,
                targets,
                probs,
            } => {
                let k = g.data()[0];
                let mut d = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    d.row_mut(r)[t] -= 1.0;
                }
                d.data_mut().iter_mut().for_each(|x| *x *= k);
                self.accumulate(grads, *logits, d);
            }
        }
    }
}
