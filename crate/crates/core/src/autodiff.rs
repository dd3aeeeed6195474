//! Matrix-level reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied during one forward pass.
//! Leaves are either parameters (borrowed, gradient tracked) or constants.
//! [`Tape::backward`] walks the records in reverse and accumulates exact
//! gradients; nodes that do not depend on any parameter are skipped.

use crate::error::{Error, Result};
use crate::matrix::{gemm_nt, gemm_tn, CsrMatrix, Matrix};
use crate::scalar::Scalar;

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'a, T> {
    Owned(Matrix<T>),
    Borrowed(&'a Matrix<T>),
}

impl<T> Value<'_, T> {
    fn get(&self) -> &Matrix<T> {
        match self {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
        }
    }
}

enum Op<'a, T> {
    Leaf,
    MatMul(Var, Var),
    Spmm(&'a CsrMatrix<T>, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    OneMinus(Var),
    ConcatCols(Var, Var),
    BroadcastRows(Var),
    Reshape(Var),
    Scale(Var, T),
    AbsDiffSum(Var, Var),
    SqDiffSum(Var, Var),
}

impl<T> Op<'_, T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Spmm(..) => "sparse_aggregate",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::OneMinus(_) => "one_minus",
            Op::ConcatCols(..) => "concat_cols",
            Op::BroadcastRows(_) => "broadcast_rows",
            Op::Reshape(_) => "reshape",
            Op::Scale(..) => "scale",
            Op::AbsDiffSum(..) => "abs_diff_sum",
            Op::SqDiffSum(..) => "sq_diff_sum",
        }
    }
}

struct Node<'a, T> {
    value: Value<'a, T>,
    op: Op<'a, T>,
    tracked: bool,
}

pub struct Tape<'a, T> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_same(a: &Matrix<impl Scalar>, b: &Matrix<impl Scalar>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, f: impl Fn(T, T) -> T) -> Matrix<T> {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn col_sums<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, m.cols());
    for i in 0..m.rows() {
        for (o, &v) in out.as_mut_slice().iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    out
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(512) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value<'a, T>, op: Op<'a, T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        self.nodes[v.0].value.get()
    }

    /// Differentiable leaf borrowing its storage.
    pub fn param(&mut self, m: &'a Matrix<T>) -> Var {
        self.push(Value::Borrowed(m), Op::Leaf, true)
    }

    /// Differentiable leaf owning its storage.
    pub fn param_owned(&mut self, m: Matrix<T>) -> Var {
        self.push(Value::Owned(m), Op::Leaf, true)
    }

    pub fn constant(&mut self, m: Matrix<T>) -> Var {
        self.push(Value::Owned(m), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, m: &'a Matrix<T>) -> Var {
        self.push(Value::Borrowed(m), Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(Value::Owned(out), Op::MatMul(a, b), t))
    }

    /// `W · x` for a fixed sparse `W`.
    pub fn spmm(&mut self, w: &'a CsrMatrix<T>, x: Var) -> Result<Var> {
        let out = w.spmm(self.value(x))?;
        let t = self.tracked(x);
        Ok(self.push(Value::Owned(out), Op::Spmm(w, x), t))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "add")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(Value::Owned(out), Op::Add(a, b), t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "mul")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(Value::Owned(out), Op::Mul(a, b), t))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(Error::Shape(format!("add_row: {:?} onto {:?}", rm.shape(), am.shape())));
        }
        let mut out = am.clone();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(rm.as_slice()) {
                *o += b;
            }
        }
        let t = self.tracked(a) || self.tracked(row);
        Ok(self.push(Value::Owned(out), Op::AddRow(a, row), t))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        let t = self.tracked(a);
        self.push(Value::Owned(out), Op::Sigmoid(a), t)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        let t = self.tracked(a);
        self.push(Value::Owned(out), Op::Tanh(a), t)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| T::one() - x);
        let t = self.tracked(a);
        self.push(Value::Owned(out), Op::OneMinus(a), t)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.rows() != bm.rows() {
            return Err(Error::Shape(format!("concat_cols: {:?} and {:?}", am.shape(), bm.shape())));
        }
        let (ca, cb) = (am.cols(), bm.cols());
        let mut out = Matrix::zeros(am.rows(), ca + cb);
        for i in 0..am.rows() {
            let row = out.row_mut(i);
            row[..ca].copy_from_slice(am.row(i));
            row[ca..].copy_from_slice(bm.row(i));
        }
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(Value::Owned(out), Op::ConcatCols(a, b), t))
    }

    /// Repeats a `1×c` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let am = self.value(a);
        if am.rows() != 1 {
            return Err(Error::Shape(format!("broadcast_rows expects one row, got {:?}", am.shape())));
        }
        let mut out = Matrix::zeros(rows, am.cols());
        for i in 0..rows {
            out.row_mut(i).copy_from_slice(am.as_slice());
        }
        let t = self.tracked(a);
        Ok(self.push(Value::Owned(out), Op::BroadcastRows(a), t))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).clone().reshaped(rows, cols)?;
        let t = self.tracked(a);
        Ok(self.push(Value::Owned(out), Op::Reshape(a), t))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        let t = self.tracked(a);
        self.push(Value::Owned(out), Op::Scale(a, c), t)
    }

    /// `Σ |a − b|` as a `1×1` node.
    pub fn abs_diff_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "abs_diff_sum")?;
        let s: T = self.value(a).as_slice().iter().zip(self.value(b).as_slice()).map(|(&x, &y)| (x - y).abs()).sum();
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(Value::Owned(Matrix::filled(1, 1, s)), Op::AbsDiffSum(a, b), t))
    }

    /// `Σ (a − b)²` as a `1×1` node.
    pub fn sq_diff_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "sq_diff_sum")?;
        let s: T = self
            .value(a)
            .as_slice()
            .iter()
            .zip(self.value(b).as_slice())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(Value::Owned(Matrix::filled(1, 1, s)), Op::SqDiffSum(a, b), t))
    }

    /// Reverse sweep from a `1×1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lm = self.value(loss);
        if lm.shape() != (1, 1) {
            return Err(Error::Shape(format!("backward from non-scalar node {:?}", lm.shape())));
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                grads[idx] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if !g.all_finite() {
                return Err(Error::Numerics(format!("non-finite gradient at {} (node {idx})", node.op.name())));
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let node = &self.nodes[idx];
        let out = node.value.get();
        let mut acc = |v: Var, f: &dyn Fn(&mut Matrix<T>)| {
            if !self.tracked(v) {
                return;
            }
            let slot = &mut grads[v.0];
            if slot.is_none() {
                let (r, c) = self.value(v).shape();
                *slot = Some(Matrix::zeros(r, c));
            }
            f(slot.as_mut().unwrap());
        };
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(a, &|ga| gemm_nt(g, self.value(b), ga));
                acc(b, &|gb| gemm_tn(self.value(a), g, gb));
            }
            Op::Spmm(w, x) => acc(x, &|gx| w.spmm_t_into(g, gx)),
            Op::Add(a, b) => {
                acc(a, &|ga| ga.add_assign(g));
                acc(b, &|gb| gb.add_assign(g));
            }
            Op::Mul(a, b) => {
                acc(a, &|ga| axpy_mul(ga, g, self.value(b)));
                acc(b, &|gb| axpy_mul(gb, g, self.value(a)));
            }
            Op::AddRow(a, row) => {
                acc(a, &|ga| ga.add_assign(g));
                acc(row, &|gr| gr.add_assign(&col_sums(g)));
            }
            Op::Sigmoid(a) => acc(a, &|ga| {
                for ((d, &gy), &s) in ga.as_mut_slice().iter_mut().zip(g.as_slice()).zip(out.as_slice()) {
                    *d += gy * s * (T::one() - s);
                }
            }),
            Op::Tanh(a) => acc(a, &|ga| {
                for ((d, &gy), &t) in ga.as_mut_slice().iter_mut().zip(g.as_slice()).zip(out.as_slice()) {
                    *d += gy * (T::one() - t * t);
                }
            }),
            Op::OneMinus(a) => acc(a, &|ga| {
                for (d, &gy) in ga.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *d -= gy;
                }
            }),
            Op::ConcatCols(a, b) => {
                let ca = self.value(a).cols();
                acc(a, &|ga| {
                    for i in 0..g.rows() {
                        for (d, &gy) in ga.row_mut(i).iter_mut().zip(&g.row(i)[..ca]) {
                            *d += gy;
                        }
                    }
                });
                acc(b, &|gb| {
                    for i in 0..g.rows() {
                        for (d, &gy) in gb.row_mut(i).iter_mut().zip(&g.row(i)[ca..]) {
                            *d += gy;
                        }
                    }
                });
            }
            Op::BroadcastRows(a) => acc(a, &|ga| ga.add_assign(&col_sums(g))),
            Op::Reshape(a) => acc(a, &|ga| {
                for (d, &gy) in ga.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *d += gy;
                }
            }),
            Op::Scale(a, c) => acc(a, &|ga| {
                for (d, &gy) in ga.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *d += gy * c;
                }
            }),
            Op::AbsDiffSum(a, b) => {
                let gy = g[(0, 0)];
                let sign = |x: T, y: T| {
                    let d = x - y;
                    if d > T::zero() {
                        gy
                    } else if d < T::zero() {
                        -gy
                    } else {
                        T::zero()
                    }
                };
                let (am, bm) = (self.value(a), self.value(b));
                acc(a, &|ga| {
                    for ((d, &x), &y) in ga.as_mut_slice().iter_mut().zip(am.as_slice()).zip(bm.as_slice()) {
                        *d += sign(x, y);
                    }
                });
                acc(b, &|gb| {
                    for ((d, &x), &y) in gb.as_mut_slice().iter_mut().zip(am.as_slice()).zip(bm.as_slice()) {
                        *d -= sign(x, y);
                    }
                });
            }
            Op::SqDiffSum(a, b) => {
                let two_g = g[(0, 0)] + g[(0, 0)];
                let (am, bm) = (self.value(a), self.value(b));
                acc(a, &|ga| {
                    for ((d, &x), &y) in ga.as_mut_slice().iter_mut().zip(am.as_slice()).zip(bm.as_slice()) {
                        *d += two_g * (x - y);
                    }
                });
                acc(b, &|gb| {
                    for ((d, &x), &y) in gb.as_mut_slice().iter_mut().zip(am.as_slice()).zip(bm.as_slice()) {
                        *d -= two_g * (x - y);
                    }
                });
            }
        }
    }
}

fn axpy_mul<T: Scalar>(acc: &mut Matrix<T>, g: &Matrix<T>, other: &Matrix<T>) {
    for ((d, &gy), &o) in acc.as_mut_slice().iter_mut().zip(g.as_slice()).zip(other.as_slice()) {
        *d += gy * o;
    }
}

/// Result of a reverse sweep. Only leaf gradients are retained.
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a tracked leaf; `None` if the loss does not
    /// depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a leaf, zero-filled when the loss does not depend on it.
    pub fn take_or_zeros(&mut self, v: Var, rows: usize, cols: usize) -> Matrix<T> {
        self.grads.get_mut(v.0).and_then(Option::take).unwrap_or_else(|| Matrix::zeros(rows, cols))
    }
}
