//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters enter
//! the tape by name from a [`ParamStore`]; [`Graph::backward`] returns the
//! gradient of one scalar node with respect to every named parameter.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-form GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Named learnable tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    tensors: BTreeMap<String, Matrix>,
    frozen: BTreeSet<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.tensors.insert(name.into(), value);
    }

    pub fn freeze(&mut self, name: &str) {
        self.frozen.insert(name.to_string());
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.tensors.contains_key(name) && !self.frozen.contains(name)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors.get_mut(name)
    }

    /// Panics when the tensor is missing; parameter sets are fixed by the
    /// model configuration, so a miss is a programming error.
    pub fn expect(&self, name: &str) -> &Matrix {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.tensors
            .keys()
            .filter(|k| !self.frozen.contains(*k))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Matrix::len).sum()
    }

    pub fn frozen(&self) -> impl Iterator<Item = &str> {
        self.frozen.iter().map(String::as_str)
    }
}

/// Gradients keyed by parameter name. Every trainable parameter is present,
/// zero when the output does not depend on it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub tensors: BTreeMap<String, Matrix>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self {
            tensors: params
                .trainable_names()
                .into_iter()
                .map(|n| {
                    let (r, c) = params.expect(&n).shape();
                    (n, Matrix::zeros(r, c))
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (k, v) in &other.tensors {
            match self.tensors.get_mut(k) {
                Some(m) => m.add_assign(v),
                None => {
                    self.tensors.insert(k.clone(), v.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for m in self.tensors.values_mut() {
            for x in m.data_mut() {
                *x *= s;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.values().map(Matrix::norm_sq).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Matrix::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(String),
    Embed { param: String, ids: Vec<u32> },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    ScalarMul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    HConcat(Vec<Var>),
    SliceCols(Var, usize),
    RowSum(Var),
    MeanRows(Var, Vec<usize>),
    Dropout(Var, Matrix),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Enters a named parameter once; later calls return the same node.
    /// Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let value = store.expect(name).clone();
        let op = if store.is_trainable(name) {
            Op::Param(name.to_string())
        } else {
            Op::Leaf
        };
        let v = self.push(value, op);
        self.params.insert(name.to_string(), v);
        v
    }

    /// Row lookup into a named `[vocab × d]` table without copying the table.
    pub fn embed(&mut self, store: &ParamStore, name: &str, ids: &[u32]) -> Result<Var> {
        let table = store.expect(name);
        let mut out = Matrix::zeros(ids.len(), table.cols());
        for (i, &id) in ids.iter().enumerate() {
            if id as usize >= table.rows() {
                return Err(Error::shape(
                    format!("lookup into `{name}`"),
                    format!("id < {}", table.rows()),
                    id,
                ));
            }
            out.row_mut(i).copy_from_slice(table.row(id as usize));
        }
        let op = if store.is_trainable(name) {
            Op::Embed {
                param: name.to_string(),
                ids: ids.to_vec(),
            }
        } else {
            Op::Leaf
        };
        Ok(self.push(out, op))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    /// `s · a` for a `1 × 1` node `s`.
    pub fn scalar_mul(&mut self, s: Var, a: Var) -> Var {
        let sv = self.value(s).to_scalar();
        let v = self.value(a).scale(sv);
        self.push(v, Op::ScalarMul(s, a))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a single row");
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(r.row(0)) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    /// Scales row `i` of `a` by `w[i]` for an `n × 1` column `w`.
    pub fn mul_col(&mut self, w: Var, a: Var) -> Var {
        let wv = self.value(w);
        assert_eq!(wv.cols(), 1, "mul_col expects a column");
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            let s = wv[(i, 0)];
            for x in v.row_mut(i) {
                *x *= s;
            }
        }
        self.push(v, Op::MulCol(w, a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Row-wise layer normalization with `1 × c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        let g = self.value(gain).row(0).to_vec();
        let b = self.value(bias).row(0).to_vec();
        let mut xhat = Matrix::zeros(n, c);
        let mut out = Matrix::zeros(n, c);
        let mut rstd = Vec::with_capacity(n);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(rs);
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[(i, j)] = h;
                out[(i, j)] = h * g[j] + b[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// Row-wise softmax. Columns flagged `false` in `mask` get weight 0; at
    /// least one column must be unmasked.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let av = self.value(a);
        let (n, c) = av.shape();
        if let Some(m) = mask {
            if m.len() != c {
                return Err(Error::shape("softmax mask", c, m.len()));
            }
            if !m.iter().any(|&x| x) {
                return Err(Error::AllMasked);
            }
        }
        if c == 0 {
            return Err(Error::AllMasked);
        }
        let keep = |j: usize| mask.map_or(true, |m| m[j]);
        let mut out = Matrix::zeros(n, c);
        for i in 0..n {
            let row = av.row(i);
            let max = (0..c)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..c {
                if keep(j) {
                    let e = (row[j] - max).exp();
                    out[(i, j)] = e;
                    total += e;
                }
            }
            for x in out.row_mut(i) {
                *x /= total;
            }
        }
        Ok(self.push(out, Op::Softmax(a)))
    }

    pub fn hconcat(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::hconcat(&mats);
        self.push(v, Op::HConcat(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice_cols(start, len);
        self.push(v, Op::SliceCols(a, start))
    }

    /// `n × c → n × 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows()).map(|i| av.row(i).iter().sum()).collect();
        let v = Matrix::from_vec(av.rows(), 1, data);
        self.push(v, Op::RowSum(a))
    }

    /// Mean of the listed rows, `1 × c`.
    pub fn mean_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let av = self.value(a);
        let mut v = Matrix::zeros(1, av.cols());
        for &r in rows {
            for (o, x) in v.row_mut(0).iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        let inv = 1.0 / rows.len().max(1) as f64;
        for o in v.row_mut(0) {
            *o *= inv;
        }
        self.push(v, Op::MeanRows(a, rows.to_vec()))
    }

    /// Inverted dropout: keeps each entry with probability `1 − p` and
    /// rescales survivors by `1 / (1 − p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return a;
        }
        let (n, c) = self.value(a).shape();
        let keep = 1.0 / (1.0 - p);
        let mask = Matrix::from_vec(
            n,
            c,
            (0..n * c)
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                .collect(),
        );
        let v = self.value(a).zip_map(&mask, |x, m| x * m);
        self.push(v, Op::Dropout(a, mask))
    }

    /// Gradients of the `1 × 1` node `output`, scaled by `upstream`, with
    /// respect to every trainable parameter in `store`.
    pub fn backward(&self, output: Var, upstream: f64, store: &ParamStore) -> Gradients {
        let mut grads = Gradients::zeros_like(store);
        let mut adj: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        let (r, c) = self.value(output).shape();
        adj[output.0] = Some(Matrix::filled(r, c, upstream));

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(name) => {
                    if let Some(t) = grads.tensors.get_mut(name) {
                        t.add_assign(&g);
                    }
                }
                Op::Embed { param, ids } => {
                    if let Some(t) = grads.tensors.get_mut(param) {
                        for (i, &id) in ids.iter().enumerate() {
                            for (o, x) in t.row_mut(id as usize).iter_mut().zip(g.row(i)) {
                                *o += x;
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.matmul(self.value(*b));
                    let gb = g.t_matmul(self.value(*a));
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.scale(-1.0));
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Affine(a, s) => accumulate(&mut adj, *a, g.scale(*s)),
                Op::ScalarMul(s, a) => {
                    let sv = self.value(*s).to_scalar();
                    let gs: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, y)| x * y)
                        .sum();
                    accumulate(&mut adj, *s, Matrix::scalar(gs));
                    accumulate(&mut adj, *a, g.scale(sv));
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, x) in gr.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut adj, *row, gr);
                    accumulate(&mut adj, *a, g);
                }
                Op::MulCol(w, a) => {
                    let wv = self.value(*w);
                    let av = self.value(*a);
                    let mut gw = Matrix::zeros(wv.rows(), 1);
                    let mut ga = g.clone();
                    for i in 0..g.rows() {
                        gw[(i, 0)] = crate::tensor::dot(g.row(i), av.row(i));
                        let s = wv[(i, 0)];
                        for x in ga.row_mut(i) {
                            *x *= s;
                        }
                    }
                    accumulate(&mut adj, *w, gw);
                    accumulate(&mut adj, *a, ga);
                }
                Op::Gelu(a) => {
                    let ga = g.zip_map(self.value(*a), |x, y| x * gelu_grad(y));
                    accumulate(&mut adj, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |x, s| x * s * (1.0 - s));
                    accumulate(&mut adj, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |x, t| x * (1.0 - t * t));
                    accumulate(&mut adj, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let (n, c) = g.shape();
                    let gv = self.value(*gain).row(0).to_vec();
                    let mut ggain = Matrix::zeros(1, c);
                    let mut gbias = Matrix::zeros(1, c);
                    let mut gx = Matrix::zeros(n, c);
                    for i in 0..n {
                        let gr = g.row(i);
                        let hr = xhat.row(i);
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..c {
                            ggain[(0, j)] += gr[j] * hr[j];
                            gbias[(0, j)] += gr[j];
                            let d = gr[j] * gv[j];
                            mean_d += d;
                            mean_dh += d * hr[j];
                        }
                        mean_d /= c as f64;
                        mean_dh /= c as f64;
                        for j in 0..c {
                            let d = gr[j] * gv[j];
                            gx[(i, j)] = rstd[i] * (d - mean_d - hr[j] * mean_dh);
                        }
                    }
                    accumulate(&mut adj, *gain, ggain);
                    accumulate(&mut adj, *bias, gbias);
                    accumulate(&mut adj, *x, gx);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let inner = crate::tensor::dot(g.row(i), y.row(i));
                        for j in 0..y.cols() {
                            ga[(i, j)] = y[(i, j)] * (g[(i, j)] - inner);
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::HConcat(parts) => {
                    let mut c = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        accumulate(&mut adj, *p, g.slice_cols(c, w));
                        c += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (n, c) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(n, c);
                    for i in 0..n {
                        ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::RowSum(a) => {
                    let (n, c) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(n, c);
                    for i in 0..n {
                        ga.row_mut(i).fill(g[(i, 0)]);
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::MeanRows(a, rows) => {
                    let (n, c) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(n, c);
                    let inv = 1.0 / rows.len().max(1) as f64;
                    for &r in rows {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(g.row(0)) {
                            *o += x * inv;
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::Dropout(a, mask) => {
                    accumulate(&mut adj, *a, g.zip_map(mask, |x, m| x * m));
                }
            }
        }
        grads
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
