//! Explicit Wengert tape for reverse-mode differentiation over dense matrices.
//!
//! Every primitive records its output value and its operands. `backward`
//! walks the records once in reverse, accumulating adjoints, and routes the
//! adjoints of parameter leaves straight into the gradient slots of the owning
//! [`ParamStore`]. Embedding lookups are recorded as single-row leaves so a
//! large table is never copied onto the tape.

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, sigmoid, Matrix, ParamStore, StoreId};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param { store: StoreId, slot: usize },
    ParamRow { store: StoreId, slot: usize, row: usize },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Rows { src: Var, start: usize },
    Sum(Var),
    LogSumExp(Var),
    Element { src: Var, row: usize, col: usize },
    LogMatVec { alpha: Var, trans: Var },
}

impl Op {
    fn is_leaf(&self) -> bool {
        matches!(self, Op::Constant | Op::Param { .. } | Op::ParamRow { .. })
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Number of recorded operations, excluding leaves.
    pub fn op_count(&self) -> usize {
        self.nodes.iter().filter(|n| !n.op.is_leaf()).count()
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

    /// Value of a `1x1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get(0, 0)
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Matrix, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NumericOverflow { op: name });
        }
        Ok(self.push(value, op))
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn constant_column(&mut self, values: &[f64]) -> Var {
        self.constant(Matrix::column(values))
    }

    /// Records the current value of parameter `name` as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let slot = store
            .index_of(name)
            .ok_or_else(|| Error::Structural(format!("no parameter `{name}` in `{}`", store.label())))?;
        let (_, entry) = store.at(slot).expect("index from index_of");
        Ok(self.push(
            entry.value.clone(),
            Op::Param {
                store: store.id(),
                slot,
            },
        ))
    }

    /// Records row `row` of parameter `name` as an `n x 1` column leaf.
    pub fn param_row(&mut self, store: &ParamStore, name: &str, row: usize) -> Result<Var> {
        let slot = store
            .index_of(name)
            .ok_or_else(|| Error::Structural(format!("no parameter `{name}` in `{}`", store.label())))?;
        let (_, entry) = store.at(slot).expect("index from index_of");
        if row >= entry.value.rows() {
            return Err(Error::shape(
                "param_row",
                format!("row {row} of a {}-row table", entry.value.rows()),
            ));
        }
        Ok(self.push(
            Matrix::column(entry.value.row(row)),
            Op::ParamRow {
                store: store.id(),
                slot,
                row,
            },
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push_checked("matmul", value, Op::MatMul(a, b))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Matrix::from_vec(va.rows(), va.cols(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip(a, b, |x, y| x + y);
        self.push_checked("add", value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip(a, b, |x, y| x - y);
        self.push_checked("sub", value, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip(a, b, |x, y| x * y);
        self.push_checked("mul", value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).scale(s);
        self.push_checked("scale", value, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.push_checked("sigmoid", value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        self.push_checked("tanh", value, Op::Tanh(a))
    }

    /// Vertical concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat"));
        }
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::vstack(&mats)?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    /// Rows `[start, start + len)`.
    pub fn rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(src);
        if start + len > m.rows() || len == 0 {
            return Err(Error::shape(
                "rows",
                format!("rows {start}..{} of {}", start + len, m.rows()),
            ));
        }
        let value = m.slice_rows(start, len);
        Ok(self.push(value, Op::Rows { src, start }))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).as_slice().iter().sum();
        self.push_checked("sum", Matrix::scalar(s), Op::Sum(a))
    }

    /// `log(sum(exp(a)))` over all entries.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        if self.value(a).is_empty() {
            return Err(Error::EmptyInput("log_sum_exp"));
        }
        let s = log_sum_exp(self.value(a).as_slice());
        self.push_checked("log_sum_exp", Matrix::scalar(s), Op::LogSumExp(a))
    }

    pub fn element(&mut self, src: Var, row: usize, col: usize) -> Result<Var> {
        let m = self.value(src);
        if row >= m.rows() || col >= m.cols() {
            return Err(Error::shape(
                "element",
                format!("({row},{col}) of {:?}", m.shape()),
            ));
        }
        let v = m.get(row, col);
        Ok(self.push(Matrix::scalar(v), Op::Element { src, row, col }))
    }

    /// Log-space vector-matrix product: `out[j] = logsumexp_i(alpha[i] + trans[i][j])`.
    pub fn log_mat_vec(&mut self, alpha: Var, trans: Var) -> Result<Var> {
        let (a, t) = (self.value(alpha), self.value(trans));
        if a.cols() != 1 || t.rows() != a.rows() {
            return Err(Error::shape(
                "log_mat_vec",
                format!("alpha {:?} with transitions {:?}", a.shape(), t.shape()),
            ));
        }
        let mut scores = vec![0.0; a.rows()];
        let out: Vec<f64> = (0..t.cols())
            .map(|j| {
                for (i, s) in scores.iter_mut().enumerate() {
                    *s = a.get(i, 0) + t.get(i, j);
                }
                log_sum_exp(&scores)
            })
            .collect();
        self.push_checked("log_mat_vec", Matrix::column(&out), Op::LogMatVec { alpha, trans })
    }

    /// Accumulates `d loss / d param` into the gradient slots of `stores`.
    ///
    /// Frozen entries have their slots zeroed and receive nothing.
    pub fn backward(&self, loss: Var, stores: &mut [&mut ParamStore]) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Structural("loss variable is not on this tape".into()));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Structural(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        for store in stores.iter_mut() {
            for (_, e) in store.iter_mut() {
                if e.frozen {
                    e.grad.fill(0.0);
                }
            }
        }

        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param { store, slot } => {
                    let entry = param_slot(stores, *store, *slot)?;
                    if !entry.frozen {
                        if entry.grad.shape() != g.shape() {
                            return Err(Error::Structural("parameter shape changed since forward".into()));
                        }
                        entry.grad.add_assign(&g);
                    }
                }
                Op::ParamRow { store, slot, row } => {
                    let entry = param_slot(stores, *store, *slot)?;
                    if !entry.frozen {
                        if *row >= entry.grad.rows() || entry.grad.cols() != g.rows() {
                            return Err(Error::Structural("embedding shape changed since forward".into()));
                        }
                        for (dst, src) in entry.grad.row_mut(*row).iter_mut().zip(g.as_slice()) {
                            *dst += src;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let da = g.matmul(&vb.transpose())?;
                    let db = va.transpose().matmul(&g)?;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
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
                    let da = elementwise(&g, self.value(*b), |g, y| g * y);
                    let db = elementwise(&g, self.value(*a), |g, x| g * x);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, g.scale(*s)),
                Op::Sigmoid(a) => {
                    let d = elementwise(&g, &node.value, |g, y| g * y * (1.0 - y));
                    accumulate(&mut adj, *a, d);
                }
                Op::Tanh(a) => {
                    let d = elementwise(&g, &node.value, |g, y| g * (1.0 - y * y));
                    accumulate(&mut adj, *a, d);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.value(*p).rows();
                        accumulate(&mut adj, *p, g.slice_rows(start, rows));
                        start += rows;
                    }
                }
                Op::Rows { src, start } => {
                    let (r, c) = self.value(*src).shape();
                    let mut d = Matrix::zeros(r, c);
                    d.as_mut_slice()[start * c..start * c + g.len()].copy_from_slice(g.as_slice());
                    accumulate(&mut adj, *src, d);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut adj, *a, Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::LogSumExp(a) => {
                    let out = node.value.get(0, 0);
                    let gs = g.get(0, 0);
                    let d = self.value(*a).map(|x| gs * (x - out).exp());
                    accumulate(&mut adj, *a, d);
                }
                Op::Element { src, row, col } => {
                    let (r, c) = self.value(*src).shape();
                    let mut d = Matrix::zeros(r, c);
                    d.set(*row, *col, g.get(0, 0));
                    accumulate(&mut adj, *src, d);
                }
                Op::LogMatVec { alpha, trans } => {
                    let (a, t) = (self.value(*alpha), self.value(*trans));
                    let n = a.rows();
                    let mut da = Matrix::zeros(n, 1);
                    let mut dt = Matrix::zeros(t.rows(), t.cols());
                    for j in 0..t.cols() {
                        let out_j = node.value.get(j, 0);
                        let gj = g.get(j, 0);
                        for i in 0..n {
                            let w = (a.get(i, 0) + t.get(i, j) - out_j).exp() * gj;
                            da.as_mut_slice()[i] += w;
                            dt.set(i, j, w);
                        }
                    }
                    accumulate(&mut adj, *alpha, da);
                    accumulate(&mut adj, *trans, dt);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

fn elementwise(g: &Matrix, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = g
        .as_slice()
        .iter()
        .zip(other.as_slice())
        .map(|(&a, &b)| f(a, b))
        .collect();
    Matrix::from_vec(g.rows(), g.cols(), data).expect("same shape")
}

fn param_slot<'a>(
    stores: &'a mut [&mut ParamStore],
    id: StoreId,
    slot: usize,
) -> Result<&'a mut crate::numeric::ParamEntry> {
    let store = stores
        .iter_mut()
        .find(|s| s.id() == id)
        .ok_or_else(|| Error::Structural("tape references a parameter store that was not supplied".into()))?;
    store
        .at_mut(slot)
        .map(|(_, e)| e)
        .ok_or_else(|| Error::Structural("tape references a missing parameter slot".into()))
}

/// Evaluates `f` on a fresh tape and returns the scalar it produced with the tape.
pub fn forward_scalar<F>(f: F) -> Result<(f64, Tape)>
where
    F: FnOnce(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape)?;
    if tape.value(out).shape() != (1, 1) {
        return Err(Error::Structural(format!(
            "forward_scalar produced a {:?} value",
            tape.value(out).shape()
        )));
    }
    let v = tape.scalar(out);
    if !v.is_finite() {
        return Err(Error::NumericOverflow { op: "forward_scalar" });
    }
    Ok((v, tape))
}
