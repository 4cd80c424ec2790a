//! A small reverse-mode automatic differentiation tape over [`Mat`] values.
//!
//! Every operation appends a node holding its forward value; [`Graph::backward`] walks the tape
//! in reverse and returns gradients for the parameter leaves. Nodes that do not depend on any
//! parameter are never visited during the backward pass.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Sum(Var),
    Gather(Var, usize, usize),
    EmbedRows(Var, Vec<usize>),
    NormalizeRows(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_of: HashMap<usize, usize>,
    param_var: HashMap<usize, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Mat::from_vec(1, 1, vec![v]))
    }

    /// A trainable leaf. The same `id` always maps to the same node within one graph.
    pub fn param(&mut self, id: usize, value: &Mat) -> Var {
        if let Some(&v) = self.param_var.get(&id) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf, true);
        self.param_of.insert(v.0, id);
        self.param_var.insert(id, v);
        v
    }

    /// Copy of a value with no gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let m = self.value(v).clone();
        self.constant(m)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(m, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).matmul_nt(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(m, Op::MatMulNT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add shape mismatch");
        let m = Mat::from_vec(x.rows, x.cols, x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect());
        let ng = self.ng(a) || self.ng(b);
        self.push(m, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "sub shape mismatch");
        let m = Mat::from_vec(x.rows, x.cols, x.data.iter().zip(&y.data).map(|(p, q)| p - q).collect());
        let ng = self.ng(a) || self.ng(b);
        self.push(m, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let m = Mat::from_vec(x.rows, x.cols, x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect());
        let ng = self.ng(a) || self.ng(b);
        self.push(m, Op::Mul(a, b), ng)
    }

    /// `x + bias` with a `1 × c` bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        assert_eq!(bv.rows, 1);
        assert_eq!(xv.cols, bv.cols, "bias width");
        let mut m = xv.clone();
        for r in 0..m.rows {
            for (o, b) in m.row_mut(r).iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        self.push(m, Op::AddRow(x, bias), ng)
    }

    /// `x · w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let m = self.value(a).scaled(s);
        let ng = self.ng(a);
        self.push(m, Op::Scale(a, s), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let m = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        let ng = self.ng(a);
        self.push(m, Op::Gelu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let m = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(m, Op::Tanh(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let m = self.value(a).map(f64::exp);
        let ng = self.ng(a);
        self.push(m, Op::Exp(a), ng)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let m = self.value(a).map(f64::ln);
        let ng = self.ng(a);
        self.push(m, Op::Log(a), ng)
    }

    /// Row-wise layer normalization with learned `1 × c` gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let c = xv.cols;
        let mut xhat = Mat::zeros(xv.rows, c);
        let mut inv_std = Vec::with_capacity(xv.rows);
        let mut out = Mat::zeros(xv.rows, c);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for j in 0..c {
                let h = (row[j] - mu) * inv;
                xhat.set(r, j, h);
                out.set(r, j, h * gv.data[j] + bv.data[j]);
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Row-wise softmax. Columns with `mask[j] == false` receive exactly zero weight.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(m) = mask {
            assert_eq!(m.len(), xv.cols, "mask width");
        }
        let keep = |j: usize| mask.is_none_or(|m| m[j]);
        let mut out = Mat::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if keep(j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::AllMasked(r));
            }
            let mut total = 0.0;
            let orow = out.row_mut(r);
            for (j, &v) in row.iter().enumerate() {
                if keep(j) {
                    let e = (v - max).exp();
                    orow[j] = e;
                    total += e;
                }
            }
            for o in orow.iter_mut() {
                *o /= total;
            }
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::Softmax(x), ng))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Mat::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (o, v) in out.row_mut(r).iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::LogSoftmax(x), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat_rows width mismatch");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows, "concat_cols height mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let m = self.value(x).slice_rows(start, end);
        let ng = self.ng(x);
        self.push(m, Op::SliceRows(x, start), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let m = self.value(x).slice_cols(start, end);
        let ng = self.ng(x);
        self.push(m, Op::SliceCols(x, start), ng)
    }

    /// Sum of all entries, as `1 × 1`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Mat::from_vec(1, 1, vec![s]), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum of squared entries.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let sq = self.mul(x, x);
        self.sum(sq)
    }

    /// Single entry as `1 × 1`.
    pub fn gather(&mut self, x: Var, r: usize, c: usize) -> Var {
        let v = self.value(x).get(r, c);
        let ng = self.ng(x);
        self.push(Mat::from_vec(1, 1, vec![v]), Op::Gather(x, r, c), ng)
    }

    /// Rows of `table` selected by `ids`.
    pub fn embed_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * t.cols);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let m = Mat::from_vec(ids.len(), t.cols, data);
        let ng = self.ng(table);
        self.push(m, Op::EmbedRows(table, ids.to_vec()), ng)
    }

    /// Scale each row to unit L2 norm.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let n = xv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            norms.push(n);
            out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
        let ng = self.ng(x);
        self.push(out, Op::NormalizeRows(x, norms), ng)
    }

    /// Reverse pass from a `1 × 1` loss. Returns `(param id, gradient)` for every parameter
    /// leaf reached, in parameter-id order.
    pub fn backward(&self, loss: Var) -> Vec<(usize, Mat)> {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Mat>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let ng = |v: Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if ng(*a) {
                        acc(&mut grads, *a, g.matmul_nt(self.value(*b)));
                    }
                    if ng(*b) {
                        acc(&mut grads, *b, self.value(*a).matmul_tn(&g));
                    }
                }
                Op::MatMulNT(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    if ng(*a) {
                        acc(&mut grads, *a, g.matmul(self.value(*b)));
                    }
                    if ng(*b) {
                        acc(&mut grads, *b, g.matmul_tn(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if ng(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if ng(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if ng(*b) {
                        acc(&mut grads, *b, g.scaled(-1.0));
                    }
                    if ng(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if ng(*a) {
                        let y = self.value(*b);
                        acc(&mut grads, *a, zip_map(&g, y, |p, q| p * q));
                    }
                    if ng(*b) {
                        let x = self.value(*a);
                        acc(&mut grads, *b, zip_map(&g, x, |p, q| p * q));
                    }
                }
                Op::AddRow(x, b) => {
                    if ng(*b) {
                        let mut gb = Mat::zeros(1, g.cols);
                        for r in 0..g.rows {
                            for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                        acc(&mut grads, *b, gb);
                    }
                    if ng(*x) {
                        acc(&mut grads, *x, g);
                    }
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scaled(*s)),
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let d = zip_map(&g, x, |gv, x| {
                        let u = GELU_C * (x + 0.044715 * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        gv * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    });
                    acc(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let d = zip_map(&g, &node.value, |gv, y| gv * (1.0 - y * y));
                    acc(&mut grads, *a, d);
                }
                Op::Exp(a) => {
                    let d = zip_map(&g, &node.value, |gv, y| gv * y);
                    acc(&mut grads, *a, d);
                }
                Op::Log(a) => {
                    let d = zip_map(&g, self.value(*a), |gv, x| gv / x);
                    acc(&mut grads, *a, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma);
                    let c = xhat.cols;
                    if ng(*gamma) || ng(*beta) {
                        let mut dg = Mat::zeros(1, c);
                        let mut db = Mat::zeros(1, c);
                        for r in 0..g.rows {
                            for j in 0..c {
                                dg.data[j] += g.get(r, j) * xhat.get(r, j);
                                db.data[j] += g.get(r, j);
                            }
                        }
                        if ng(*gamma) {
                            acc(&mut grads, *gamma, dg);
                        }
                        if ng(*beta) {
                            acc(&mut grads, *beta, db);
                        }
                    }
                    if ng(*x) {
                        let mut dx = Mat::zeros(g.rows, c);
                        for r in 0..g.rows {
                            let mut s1 = 0.0;
                            let mut s2 = 0.0;
                            for j in 0..c {
                                let dh = g.get(r, j) * gv.data[j];
                                s1 += dh;
                                s2 += dh * xhat.get(r, j);
                            }
                            for j in 0..c {
                                let dh = g.get(r, j) * gv.data[j];
                                let v = inv_std[r] / c as f64
                                    * (c as f64 * dh - s1 - xhat.get(r, j) * s2);
                                dx.set(r, j, v);
                            }
                        }
                        acc(&mut grads, *x, dx);
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut dx = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let dotp: f64 = y.row(r).iter().zip(g.row(r)).map(|(p, q)| p * q).sum();
                        for j in 0..y.cols {
                            dx.set(r, j, y.get(r, j) * (g.get(r, j) - dotp));
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let mut dx = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let gs: f64 = g.row(r).iter().sum();
                        for j in 0..y.cols {
                            dx.set(r, j, g.get(r, j) - y.get(r, j).exp() * gs);
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let rows = self.value(p).rows;
                        if ng(p) {
                            acc(&mut grads, p, g.slice_rows(off, off + rows));
                        }
                        off += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        if ng(p) {
                            acc(&mut grads, p, g.slice_cols(off, off + cols));
                        }
                        off += cols;
                    }
                }
                Op::SliceRows(x, start) => {
                    let xv = self.value(*x);
                    let mut d = Mat::zeros(xv.rows, xv.cols);
                    d.data[start * xv.cols..(start + g.rows) * xv.cols].copy_from_slice(&g.data);
                    acc(&mut grads, *x, d);
                }
                Op::SliceCols(x, start) => {
                    let xv = self.value(*x);
                    let mut d = Mat::zeros(xv.rows, xv.cols);
                    for r in 0..g.rows {
                        d.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *x, d);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    acc(&mut grads, *x, Mat::filled(xv.rows, xv.cols, g.data[0]));
                }
                Op::Gather(x, r, c) => {
                    let xv = self.value(*x);
                    let mut d = Mat::zeros(xv.rows, xv.cols);
                    d.set(*r, *c, g.data[0]);
                    acc(&mut grads, *x, d);
                }
                Op::EmbedRows(table, ids) => {
                    let t = self.value(*table);
                    let mut d = Mat::zeros(t.rows, t.cols);
                    for (k, &id) in ids.iter().enumerate() {
                        for (o, v) in d.row_mut(id).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *table, d);
                }
                Op::NormalizeRows(x, norms) => {
                    let y = &node.value;
                    let mut d = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yg: f64 = y.row(r).iter().zip(g.row(r)).map(|(p, q)| p * q).sum();
                        for j in 0..y.cols {
                            d.set(r, j, (g.get(r, j) - y.get(r, j) * yg) / norms[r]);
                        }
                    }
                    acc(&mut grads, *x, d);
                }
            }
        }

        let mut out: Vec<(usize, Mat)> = grads
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| {
                let g = g?;
                self.param_of.get(&i).map(|&id| (id, g))
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

fn zip_map(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    Mat::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_mat(seed: u64, r: usize, c: usize) -> Mat {
        let v = crate::util::gaussian_vector(seed, r * c);
        let s = ((r * c) as f64).sqrt() * 0.5;
        Mat::from_vec(r, c, v.iter().map(|x| x * s).collect())
    }

    /// Central differences against the tape for a composite expression touching every op.
    #[test]
    fn every_op_matches_finite_differences() {
        let params = vec![
            rand_mat(1, 3, 4),
            rand_mat(2, 4, 4),
            rand_mat(3, 1, 4),
            rand_mat(4, 1, 4),
            rand_mat(5, 1, 4),
            rand_mat(6, 5, 4),
        ];
        let f = |ps: &[Mat]| -> (Graph, Var) {
            let mut g = Graph::new();
            let x = g.param(0, &ps[0]);
            let w = g.param(1, &ps[1]);
            let b = g.param(2, &ps[2]);
            let gam = g.param(3, &ps[3]);
            let bet = g.param(4, &ps[4]);
            let table = g.param(5, &ps[5]);
            let h = g.linear(x, w, b);
            let h = g.gelu(h);
            let h = g.layer_norm(h, gam, bet);
            let e = g.embed_rows(table, &[4, 0, 4]);
            let s = g.matmul_nt(h, e);
            let p = g.softmax(s, Some(&[true, false, true])).unwrap();
            let ls = g.log_softmax(s);
            let t = g.tanh(h);
            let n = g.normalize_rows(t);
            let top = g.slice_rows(n, 0, 2);
            let left = g.slice_cols(top, 1, 3);
            let cat = g.concat_cols(&[left, left]);
            let cat = g.concat_rows(&[cat, cat]);
            let sq = g.sum_squares(cat);
            let pe = g.exp(p);
            let pl = g.add(pe, p);
            let pl = g.log(pl);
            let z = g.sub(pl, ls);
            let z = g.mul(z, p);
            let z = g.scale(z, 0.7);
            let zs = g.sum(z);
            let gth = g.gather(ls, 1, 2);
            let tot = g.add(zs, sq);
            let tot = g.add(tot, gth);
            (g, tot)
        };
        let (g, loss) = f(&params);
        let grads = g.backward(loss);
        assert_eq!(grads.len(), params.len());
        let eps = 1e-6;
        for (id, grad) in grads {
            for k in 0..params[id].len() {
                let mut plus = params.clone();
                plus[id].data[k] += eps;
                let mut minus = params.clone();
                minus[id].data[k] -= eps;
                let (gp, lp) = f(&plus);
                let (gm, lm) = f(&minus);
                let num = (gp.scalar_value(lp) - gm.scalar_value(lm)) / (2.0 * eps);
                let ana = grad.data[k];
                let err = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
                assert!(err < 1e-5, "param {id}[{k}]: analytic {ana} numeric {num}");
            }
        }
    }

    #[test]
    fn masked_softmax_gives_exact_zeros() {
        let mut g = Graph::new();
        let x = g.constant(Mat::from_vec(2, 3, vec![1.0, 50.0, 2.0, 0.0, 0.0, 0.0]));
        let p = g.softmax(x, Some(&[true, false, true])).unwrap();
        let v = g.value(p);
        assert_eq!(v.get(0, 1), 0.0);
        assert_eq!(v.get(1, 1), 0.0);
        assert!((v.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(matches!(g.softmax(x, Some(&[false, false, false])), Err(Error::AllMasked(0))));
    }

    #[test]
    fn constants_do_not_receive_gradients() {
        let mut g = Graph::new();
        let c = g.constant(Mat::from_vec(1, 2, vec![1.0, 2.0]));
        let p = g.param(0, &Mat::from_vec(1, 2, vec![3.0, 4.0]));
        let again = g.param(0, &Mat::from_vec(1, 2, vec![9.0, 9.0]));
        assert_eq!(p, again);
        let m = g.mul(c, p);
        let s = g.sum(m);
        let grads = g.backward(s);
        assert_eq!(grads, vec![(0, Mat::from_vec(1, 2, vec![1.0, 2.0]))]);
    }
}
