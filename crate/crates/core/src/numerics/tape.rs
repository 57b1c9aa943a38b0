//! Reverse-mode differentiation over small dense matrices.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! value. [`Tape::backward`] walks the nodes in reverse and accumulates the
//! gradient of a scalar node into a flat buffer aligned with the
//! [`ParamVector`] the parameter nodes were read from.

use super::mat::{gemm, Mat};
use super::params::{ParamVector, Segment};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param {
        offset: usize,
    },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Transpose(Var),
    /// Clip to [-1, 1] then snap to a per-column grid. Backward passes the
    /// gradient straight through inside the clip range.
    Quantize(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    param_len: usize,
}

impl Tape {
    /// New tape whose gradients are reported against a parameter vector of
    /// `param_len` entries.
    pub fn new(param_len: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(256),
            param_len,
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.len(), 1);
        m.data[0]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Read a parameter segment as a matrix. One-dimensional segments become
    /// row vectors.
    pub fn param(&mut self, params: &ParamVector, seg: &Segment) -> Var {
        let (rows, cols) = match seg.shape.as_slice() {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            other => panic!("unsupported parameter shape {other:?}"),
        };
        let value = Mat::from_vec(rows, cols, params.get(seg).to_vec());
        self.push(value, Op::Param { offset: seg.offset })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "elementwise shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect();
        let value = Mat::from_vec(x.rows, x.cols, data);
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// Add a 1 x cols row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, b) = (self.value(a), self.value(row));
        assert_eq!(b.rows, 1, "add_row expects a row vector");
        assert_eq!(x.cols, b.cols, "add_row width mismatch");
        let mut value = x.clone();
        for r in 0..value.rows {
            for (v, bias) in value.row_mut(r).iter_mut().zip(&b.data) {
                *v += bias;
            }
        }
        self.push(value, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v + s);
        self.push(value, Op::AddScalar(a))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        self.push(value, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Mat::from_vec(1, 1, vec![s]), Op::Sum(a))
    }

    /// Mean over rows of the squared row norms: `(1/rows) * sum ||row||^2`.
    pub fn mean_row_sq_norm(&mut self, a: Var) -> Var {
        let rows = self.value(a).rows.max(1);
        let sq = self.square(a);
        let s = self.sum(sq);
        self.scale(s, 1.0 / rows as f64)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut value = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let m = self.value(p);
                assert_eq!(m.rows, rows, "concat_cols row mismatch");
                value.data[r * cols + c0..r * cols + c0 + m.cols].copy_from_slice(m.row(r));
                c0 += m.cols;
            }
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        assert!(start + len <= m.cols, "slice_cols out of range");
        let mut value = Mat::zeros(m.rows, len);
        for r in 0..m.rows {
            value.row_mut(r).copy_from_slice(&m.row(r)[start..start + len]);
        }
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat_rows col mismatch");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        assert!(start + len <= m.rows, "slice_rows out of range");
        let data = m.data[start * m.cols..(start + len) * m.cols].to_vec();
        let value = Mat::from_vec(len, m.cols, data);
        self.push(value, Op::SliceRows(a, start))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    /// Finite-grid quantisation with `levels[c]` points on [-1, 1] for column
    /// `c`; gradient is straight-through inside the clip range.
    pub fn quantize(&mut self, a: Var, levels: &[usize]) -> Var {
        let m = self.value(a);
        assert_eq!(m.cols, levels.len(), "quantize level count");
        let mut value = m.clone();
        for r in 0..value.rows {
            for (v, &l) in value.row_mut(r).iter_mut().zip(levels) {
                *v = snap_to_grid(*v, l);
            }
        }
        self.push(value, Op::Quantize(a))
    }

    /// Gradient of the scalar node `loss` with respect to every parameter
    /// node, accumulated into a buffer of the tape's parameter length.
    pub fn backward(&self, loss: Var) -> Vec<f64> {
        let mut param_grad = vec![0.0; self.param_len];
        let mut grads: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        let lv = self.value(loss);
        assert_eq!(lv.len(), 1, "backward expects a scalar loss");
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param { offset } => {
                    for (dst, src) in param_grad[*offset..*offset + g.len()].iter_mut().zip(&g.data) {
                        *dst += src;
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    // dA = G * B^T
                    let mut da = Mat::zeros(av.rows, av.cols);
                    gemm(
                        g.rows,
                        g.cols,
                        bv.rows,
                        (&g.data, g.cols as isize, 1),
                        (&bv.data, 1, bv.cols as isize),
                        &mut da.data,
                        0.0,
                    );
                    // dB = A^T * G
                    let mut db = Mat::zeros(bv.rows, bv.cols);
                    gemm(
                        av.cols,
                        av.rows,
                        g.cols,
                        (&av.data, 1, av.cols as isize),
                        (&g.data, g.cols as isize, 1),
                        &mut db.data,
                        0.0,
                    );
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = zip_map(&g, bv, |gv, y| gv * y);
                    let db = zip_map(&g, av, |gv, x| gv * x);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    let mut db = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (d, v) in db.data.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *row, db);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.map(|v| v * s)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Tanh(a) => {
                    let d = zip_map(&g, &node.value, |gv, y| gv * (1.0 - y * y));
                    accumulate(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let d = zip_map(&g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = zip_map(&g, &node.value, |gv, y| gv * y * (1.0 - y));
                    accumulate(&mut grads, *a, d);
                }
                Op::Exp(a) => {
                    let d = zip_map(&g, &node.value, |gv, y| gv * y);
                    accumulate(&mut grads, *a, d);
                }
                Op::Square(a) => {
                    let d = zip_map(&g, self.value(*a), |gv, x| 2.0 * gv * x);
                    accumulate(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    let s = g.data[0];
                    accumulate(&mut grads, *a, Mat::from_vec(av.rows, av.cols, vec![s; av.len()]));
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let pc = self.value(p).cols;
                        let mut d = Mat::zeros(g.rows, pc);
                        for r in 0..g.rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + pc]);
                        }
                        c0 += pc;
                        accumulate(&mut grads, p, d);
                    }
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let mut d = Mat::zeros(av.rows, av.cols);
                    for r in 0..g.rows {
                        d.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let data = g.data[r0 * g.cols..(r0 + pv.rows) * g.cols].to_vec();
                        r0 += pv.rows;
                        accumulate(&mut grads, p, Mat::from_vec(pv.rows, pv.cols, data));
                    }
                }
                Op::SliceRows(a, start) => {
                    let av = self.value(*a);
                    let mut d = Mat::zeros(av.rows, av.cols);
                    d.data[start * av.cols..(start + g.rows) * av.cols].copy_from_slice(&g.data);
                    accumulate(&mut grads, *a, d);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Quantize(a) => {
                    let d = zip_map(&g, self.value(*a), |gv, x| if x.abs() <= 1.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *a, d);
                }
            }
        }
        param_grad
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data.iter_mut().zip(&g.data) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    Mat::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    )
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Clip to [-1, 1] and round to the nearest of `levels` evenly spaced points.
pub fn snap_to_grid(v: f64, levels: usize) -> f64 {
    assert!(levels >= 2, "quantisation needs at least two levels");
    let span = (levels - 1) as f64;
    let clipped = v.clamp(-1.0, 1.0);
    let idx = ((clipped + 1.0) * span / 2.0).round();
    -1.0 + 2.0 * idx / span
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += eps;
                m[i] -= eps;
                (f(&p) - f(&m)) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn matmul_and_activations_match_finite_differences() {
        let mut params = ParamVector::new();
        let w = params.push_zeros("w", &[3, 2]);
        let b = params.push_zeros("b", &[2]);
        params
            .values_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = 0.3 * (i as f64) - 0.7);
        let input = Mat::from_rows(&[[0.5, -1.0, 2.0], [1.5, 0.2, -0.3]]);

        let eval = |vals: &[f64], want_grad: bool| {
            let mut p = params.clone();
            p.values_mut().copy_from_slice(vals);
            let mut t = Tape::new(p.len());
            let x = t.constant(input.clone());
            let wv = t.param(&p, &w);
            let bv = t.param(&p, &b);
            let h = t.matmul(x, wv);
            let h = t.add_row(h, bv);
            let a = t.tanh(h);
            let s = t.sigmoid(h);
            let e = t.exp(a);
            let r = t.relu(h);
            let m = t.mul(e, s);
            let c = t.concat_cols(&[m, r]);
            let sl = t.slice_cols(c, 1, 2);
            let rows = t.concat_rows(&[sl, a]);
            let top = t.slice_rows(rows, 1, 3);
            let tt = t.transpose(top);
            let top = t.transpose(tt);
            let loss = t.mean_row_sq_norm(top);
            let g = if want_grad { t.backward(loss) } else { vec![] };
            (t.scalar(loss), g)
        };
        let (_, analytic) = eval(params.values(), true);
        let numeric = finite_diff(|v| eval(v, false).0, params.values(), 1e-6);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-6, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn grid_snapping() {
        assert_eq!(snap_to_grid(0.4, 3), 0.0);
        assert_eq!(snap_to_grid(0.6, 3), 1.0);
        assert_eq!(snap_to_grid(7.0, 5), 1.0);
        assert_eq!(snap_to_grid(-0.3, 5), -0.5);
        assert!((snap_to_grid(0.3, 4) - 1.0 / 3.0).abs() < 1e-15);
    }
}
