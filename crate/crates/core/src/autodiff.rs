//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in execution order. Values live on the
//! tape and are addressed through [`Var`] handles; `backward` walks the
//! records in reverse and returns the gradients of every leaf that was
//! registered with `requires_grad`. A tape supports exactly one backward pass.

use std::sync::Arc;

use crate::error::{GlaError, Result};
use crate::matrix::{Matrix, SparseMatrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    RowScale(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    SumAll(Var),
    ColumnSum(Var),
    L2NormRows(Var),
    Dot(Var, Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Recip(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], keyed by leaf handle.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of a leaf. Leaves that did not require gradients, or that
    /// the loss does not depend on, report `None`.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a leaf, or a zero matrix of the given shape.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> GlaError {
    GlaError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
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

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Registers a trainable input.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.leaf(value, true)
    }

    /// Registers an input that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check(&self, v: Var) -> Result<&Matrix> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or(GlaError::UnknownVar(v.0))
    }

    fn push(&mut self, op_name: &'static str, value: Matrix, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(GlaError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.check(a)?.matmul(self.check(b)?)?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// Sparse constant times dense value.
    pub fn spmm(&mut self, s: Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let out = s.mul_dense(self.check(x)?)?;
        self.push("spmm", out, Op::SpMM(s, x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.check(a)?, self.check(b)?);
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av, bv));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    /// Adds the `1 × m` row `b` to every row of the `n × m` value `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.check(a)?, self.check(b)?);
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(shape_err("add_row", av, bv));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, &x) in out.row_mut(r).iter_mut().zip(bv.as_slice()) {
                *o += x;
            }
        }
        self.push("add_row", out, Op::AddRow(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.check(a)?, self.check(b)?);
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", av, bv));
        }
        let data = av.as_slice().iter().zip(bv.as_slice()).map(|(x, y)| x * y).collect();
        let out = Matrix::new(av.rows(), av.cols(), data)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Multiplies row `i` of the `n × m` value `a` by entry `i` of the
    /// `n × 1` column `s`.
    pub fn row_scale(&mut self, a: Var, s: Var) -> Result<Var> {
        let (av, sv) = (self.check(a)?, self.check(s)?);
        if sv.cols() != 1 || sv.rows() != av.rows() {
            return Err(shape_err("row_scale", av, sv));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            let k = sv.get(r, 0);
            out.row_mut(r).iter_mut().for_each(|x| *x *= k);
        }
        self.push("row_scale", out, Op::RowScale(a, s), &[a, s])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.check(a)?.map(|x| x * s);
        self.push("scale", out, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.check(a)?.map(|x| if x > 0.0 { x } else { 0.0 });
        self.push("relu", out, Op::Relu(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.check(a)?;
        let mut out = av.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            row.iter_mut().for_each(|x| *x /= total);
        }
        self.push("softmax_rows", out, Op::SoftmaxRows(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let out = Matrix::filled(1, 1, self.check(a)?.sum());
        self.push("sum_all", out, Op::SumAll(a), &[a])
    }

    /// Column-wise sum, `n × m -> 1 × m`.
    pub fn column_sum(&mut self, a: Var) -> Result<Var> {
        let av = self.check(a)?;
        let mut out = Matrix::zeros(1, av.cols());
        for r in 0..av.rows() {
            for (o, &x) in out.as_mut_slice().iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        self.push("column_sum", out, Op::ColumnSum(a), &[a])
    }

    /// Euclidean norm of every row, `n × m -> n × 1`.
    pub fn l2_norm_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.check(a)?;
        let data = (0..av.rows())
            .map(|r| av.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let out = Matrix::new(av.rows(), 1, data)?;
        self.push("l2_norm_rows", out, Op::L2NormRows(a), &[a])
    }

    /// Frobenius inner product of two equally shaped values, as `1 × 1`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.check(a)?, self.check(b)?);
        if av.shape() != bv.shape() {
            return Err(shape_err("dot", av, bv));
        }
        let s = av.as_slice().iter().zip(bv.as_slice()).map(|(x, y)| x * y).sum();
        self.push("dot", Matrix::filled(1, 1, s), Op::Dot(a, b), &[a, b])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let av = self.check(a)?;
        if let Some(bad) = av.as_slice().iter().find(|&&x| x <= 0.0) {
            return Err(GlaError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        let out = av.map(f64::ln);
        self.push("log", out, Op::Log(a), &[a])
    }

    /// Clamps into `[lo, hi]`; the gradient passes only where the input was
    /// already inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.check(a)?.map(|x| x.clamp(lo, hi));
        self.push("clamp", out, Op::Clamp(a, lo, hi), &[a])
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let av = self.check(a)?;
        if av.as_slice().contains(&0.0) {
            return Err(GlaError::Domain {
                op: "recip",
                detail: "zero input".into(),
            });
        }
        let out = av.map(|x| 1.0 / x);
        self.push("recip", out, Op::Recip(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.check(a)?.transpose();
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    /// Stacks values with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| GlaError::Domain {
            op: "concat_rows",
            detail: "no inputs".into(),
        })?;
        let cols = self.check(*first)?.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.check(p)?;
            if pv.cols() != cols {
                return Err(shape_err("concat_rows", self.value(*first), pv));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.as_slice());
        }
        let out = Matrix::new(rows, cols, data)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Runs the reverse pass from a `1 × 1` loss.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(GlaError::TapeConsumed);
        }
        let lv = self.check(loss)?;
        if lv.shape() != (1, 1) {
            return Err(GlaError::NonScalarLoss {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        }

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
        }

        // Keep only leaf gradients.
        for (id, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        let mut acc = |v: Var, delta: Matrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    acc(*a, g.matmul(&val(*b).transpose()).expect("shapes recorded"));
                }
                if self.requires_grad(*b) {
                    acc(*b, val(*a).transpose().matmul(g).expect("shapes recorded"));
                }
            }
            Op::SpMM(s, x) => acc(*x, s.transpose_mul_dense(g)),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, b) => {
                acc(*a, g.clone());
                let mut gb = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, &x) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                acc(*b, gb);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, elementwise(g, bv, |x, y| x * y));
                acc(*b, elementwise(g, av, |x, y| x * y));
            }
            Op::RowScale(a, s) => {
                let (av, sv) = (val(*a), val(*s));
                let mut ga = g.clone();
                let mut gs = Matrix::zeros(sv.rows(), 1);
                for r in 0..g.rows() {
                    let k = sv.get(r, 0);
                    ga.row_mut(r).iter_mut().for_each(|x| *x *= k);
                    let d: f64 = g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum();
                    gs.set(r, 0, d);
                }
                acc(*a, ga);
                acc(*s, gs);
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::Relu(a) => acc(*a, elementwise(g, val(*a), |x, y| if y > 0.0 { x } else { 0.0 })),
            Op::SoftmaxRows(a) => {
                let mut ga = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gy: f64 = g.row(r).iter().zip(y).map(|(x, y)| x * y).sum();
                    for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                        *o = y[c] * (g.get(r, c) - gy);
                    }
                }
                acc(*a, ga);
            }
            Op::SumAll(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::ColumnSum(a) => {
                let (rows, cols) = val(*a).shape();
                let mut ga = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    ga.row_mut(r).copy_from_slice(g.row(0));
                }
                acc(*a, ga);
            }
            Op::L2NormRows(a) => {
                let av = val(*a);
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let norm = out.get(r, 0);
                    if norm == 0.0 {
                        continue;
                    }
                    let k = g.get(r, 0) / norm;
                    for (o, &x) in ga.row_mut(r).iter_mut().zip(av.row(r)) {
                        *o = k * x;
                    }
                }
                acc(*a, ga);
            }
            Op::Dot(a, b) => {
                let k = g.get(0, 0);
                let (av, bv) = (val(*a), val(*b));
                acc(*a, bv.map(|x| x * k));
                acc(*b, av.map(|x| x * k));
            }
            Op::Log(a) => acc(*a, elementwise(g, val(*a), |x, y| x / y)),
            Op::Clamp(a, lo, hi) => acc(
                *a,
                elementwise(g, val(*a), |x, y| if y >= *lo && y <= *hi { x } else { 0.0 }),
            ),
            Op::Recip(a) => acc(*a, elementwise(g, val(*a), |x, y| -x / (y * y))),
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = val(p).shape();
                    let slice = g.as_slice()[offset * cols..(offset + rows) * cols].to_vec();
                    offset += rows;
                    acc(p, Matrix::new(rows, cols, slice).expect("shapes recorded"));
                }
            }
        }
    }
}

fn elementwise(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::new(a.rows(), a.cols(), data).expect("equal shapes")
}
