//! Minimal reverse-mode differentiation over row-major matrices.
//!
//! Only the handful of operations the toy denoiser needs. Every node keeps its
//! forward value; `backward` walks the tape once in reverse.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{exp, sqrt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Queries attend over keys within one group.
#[derive(Debug, Clone)]
pub struct Group {
    pub queries: Vec<usize>,
    pub keys: Vec<usize>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Vec<f64>),
    Silu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, groups: Vec<Group>, heads: usize, probs: Vec<f64> },
    WeightedSse { pred: Var, target: Vec<f64>, row_weights: Vec<f64> },
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols, y.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(x.rows, y.cols);
        for i in 0..x.rows {
            let orow = &mut out.data[i * y.cols..(i + 1) * y.cols];
            for (k, xv) in x.row(i).iter().enumerate() {
                if *xv == 0.0 {
                    continue;
                }
                for (o, yv) in orow.iter_mut().zip(y.row(k)) {
                    *o += xv * yv;
                }
            }
        }
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert!(x.rows == y.rows && x.cols == y.cols, "add shape");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let out = Matrix::from_vec(x.rows, x.cols, data);
        self.push(out, Op::Add(a, b))
    }

    /// `x + 1ᵀ b` for a `1 × cols` row `b`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (x, r) = (self.value(a), self.value(b));
        assert!(r.rows == 1 && r.cols == x.cols, "bias shape");
        let mut out = x.clone();
        for row in out.data.chunks_exact_mut(x.cols) {
            for (o, bv) in row.iter_mut().zip(&r.data) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    /// Multiplies row `i` by the constant `scales[i]`.
    pub fn scale_rows(&mut self, a: Var, scales: Vec<f64>) -> Var {
        let x = self.value(a);
        assert_eq!(scales.len(), x.rows, "row scale count");
        let mut out = x.clone();
        for (row, s) in out.data.chunks_exact_mut(x.cols).zip(&scales) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        self.push(out, Op::ScaleRows(a, scales))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data.iter().map(|v| v * sigmoid(*v)).collect();
        let out = Matrix::from_vec(x.rows, x.cols, data);
        self.push(out, Op::Silu(a))
    }

    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var) -> Var {
        let x = self.value(a);
        let (g, b) = (self.value(gamma), self.value(beta));
        let c = x.cols;
        let mut out = Matrix::zeros(x.rows, c);
        let mut xhat = vec![0.0; x.data.len()];
        let mut inv_std = vec![0.0; x.rows];
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / sqrt(var + LN_EPS);
            inv_std[r] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[r * c + j] = h;
                out.data[r * c + j] = h * g.data[j] + b.data[j];
            }
        }
        self.push(out, Op::LayerNorm { x: a, gamma, beta, xhat, inv_std })
    }

    /// Multi-head scaled dot-product attention restricted to `groups`.
    /// Rows of `q` outside every group produce zeros.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: Vec<Group>, heads: usize) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let f = qm.cols;
        assert!(km.cols == f && vm.cols == f && km.rows == vm.rows, "attention shapes");
        assert!(heads > 0 && f % heads == 0, "heads must divide feature width");
        let dh = f / heads;
        let scale = 1.0 / sqrt(dh as f64);
        let mut out = Matrix::zeros(qm.rows, f);
        let mut probs = Vec::new();
        let mut scores = Vec::new();
        for g in &groups {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for &qi in &g.queries {
                    let qrow = &qm.row(qi)[cols.clone()];
                    scores.clear();
                    let mut max = f64::NEG_INFINITY;
                    for &kj in &g.keys {
                        let s = qrow.iter().zip(&km.row(kj)[cols.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale;
                        max = max.max(s);
                        scores.push(s);
                    }
                    let mut z = 0.0;
                    for s in scores.iter_mut() {
                        *s = exp(*s - max);
                        z += *s;
                    }
                    let orow = &mut out.data[qi * f..(qi + 1) * f];
                    for (s, &kj) in scores.iter().zip(&g.keys) {
                        let p = s / z;
                        probs.push(p);
                        for (o, vv) in orow[cols.clone()].iter_mut().zip(&vm.row(kj)[cols.clone()]) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        self.push(out, Op::Attention { q, k, v, groups, heads, probs })
    }

    /// Scalar `Σ_r row_weights[r] Σ_c (pred[r, c] − target[r, c])²`.
    pub fn weighted_sse(&mut self, pred: Var, target: Vec<f64>, row_weights: Vec<f64>) -> Var {
        let p = self.value(pred);
        assert!(target.len() == p.data.len() && row_weights.len() == p.rows, "sse shapes");
        let mut total = 0.0;
        for r in 0..p.rows {
            if row_weights[r] == 0.0 {
                continue;
            }
            let sse: f64 = p.row(r).iter().zip(&target[r * p.cols..(r + 1) * p.cols]).map(|(a, b)| (a - b) * (a - b)).sum();
            total += row_weights[r] * sse;
        }
        self.push(Matrix::from_vec(1, 1, vec![total]), Op::WeightedSse { pred, target, row_weights })
    }

    /// Gradients of the scalar node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0; self.nodes[loss.0].value.data.len()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (x.rows, x.cols, y.cols);
                    let mut ga = vec![0.0; n * k];
                    let mut gb = vec![0.0; k * m];
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for kk in 0..k {
                            let yrow = y.row(kk);
                            ga[i * k + kk] = grow.iter().zip(yrow).map(|(p, q)| p * q).sum();
                            let xv = x.data[i * k + kk];
                            if xv != 0.0 {
                                for (o, gv) in gb[kk * m..(kk + 1) * m].iter_mut().zip(grow) {
                                    *o += xv * gv;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let cols = node.value.cols;
                    let mut gb = vec![0.0; cols];
                    for row in g.chunks_exact(cols) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, gb);
                }
                Op::ScaleRows(a, scales) => {
                    let cols = node.value.cols;
                    let mut ga = g;
                    for (row, s) in ga.chunks_exact_mut(cols).zip(scales) {
                        row.iter_mut().for_each(|v| *v *= s);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Silu(a) => {
                    let x = self.value(*a);
                    let ga = x
                        .data
                        .iter()
                        .zip(&g)
                        .map(|(v, gv)| {
                            let s = sigmoid(*v);
                            gv * (s + v * s * (1.0 - s))
                        })
                        .collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let c = node.value.cols;
                    let gam = &self.value(*gamma).data;
                    let mut gx = vec![0.0; g.len()];
                    let mut gg = vec![0.0; c];
                    let mut gbeta = vec![0.0; c];
                    for r in 0..node.value.rows {
                        let grow = &g[r * c..(r + 1) * c];
                        let hrow = &xhat[r * c..(r + 1) * c];
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for j in 0..c {
                            gg[j] += grow[j] * hrow[j];
                            gbeta[j] += grow[j];
                            let d = grow[j] * gam[j];
                            sum_d += d;
                            sum_dh += d * hrow[j];
                        }
                        let inv_c = 1.0 / c as f64;
                        for j in 0..c {
                            let d = grow[j] * gam[j];
                            gx[r * c + j] = inv_std[r] * (d - inv_c * sum_d - hrow[j] * inv_c * sum_dh);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gamma, gg);
                    accumulate(&mut grads, *beta, gbeta);
                }
                Op::Attention { q, k, v, groups, heads, probs } => {
                    let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                    let f = qm.cols;
                    let dh = f / heads;
                    let scale = 1.0 / sqrt(dh as f64);
                    let mut gq = vec![0.0; qm.data.len()];
                    let mut gk = vec![0.0; km.data.len()];
                    let mut gv = vec![0.0; vm.data.len()];
                    let mut cursor = 0;
                    let mut dp = Vec::new();
                    for grp in groups {
                        for h in 0..*heads {
                            let c0 = h * dh;
                            for &qi in &grp.queries {
                                let p = &probs[cursor..cursor + grp.keys.len()];
                                cursor += grp.keys.len();
                                let gout = &g[qi * f + c0..qi * f + c0 + dh];
                                dp.clear();
                                let mut dot = 0.0;
                                for (pj, &kj) in p.iter().zip(&grp.keys) {
                                    let vrow = &vm.data[kj * f + c0..kj * f + c0 + dh];
                                    let d: f64 = gout.iter().zip(vrow).map(|(a, b)| a * b).sum();
                                    dp.push(d);
                                    dot += pj * d;
                                    for (o, go) in gv[kj * f + c0..kj * f + c0 + dh].iter_mut().zip(gout) {
                                        *o += pj * go;
                                    }
                                }
                                for ((pj, dpj), &kj) in p.iter().zip(&dp).zip(&grp.keys) {
                                    let ds = pj * (dpj - dot) * scale;
                                    if ds == 0.0 {
                                        continue;
                                    }
                                    for j in 0..dh {
                                        gq[qi * f + c0 + j] += ds * km.data[kj * f + c0 + j];
                                        gk[kj * f + c0 + j] += ds * qm.data[qi * f + c0 + j];
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *q, gq);
                    accumulate(&mut grads, *k, gk);
                    accumulate(&mut grads, *v, gv);
                }
                Op::WeightedSse { pred, target, row_weights } => {
                    let p = self.value(*pred);
                    let c = p.cols;
                    let mut gp = vec![0.0; p.data.len()];
                    for r in 0..p.rows {
                        let w = 2.0 * row_weights[r] * g[0];
                        if w == 0.0 {
                            continue;
                        }
                        for j in 0..c {
                            gp[r * c + j] = w * (p.data[r * c + j] - target[r * c + j]);
                        }
                    }
                    accumulate(&mut grads, *pred, gp);
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(&g) {
                *e += x;
            }
        }
        slot => *slot = Some(g),
    }
}

pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of a leaf; `None` if the loss does not depend on it.
    pub fn of(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0)?.as_deref()
    }
}
