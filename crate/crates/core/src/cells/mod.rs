//! Recurrent cells: the standard LSTM, the Basic-LSTM whose weights are
//! generated per timestep from a meta vector, and the Meta-LSTM controller.
//!
//! Gate blocks are stacked in the order `(g, o, i, f)` everywhere: rows
//! `[0, h)` of a weight matrix feed the candidate `g` (tanh), then the output,
//! input and forget gates (sigmoid). Affine inputs are concatenated as
//! `[x_t; h_{t-1}]` for LSTM and Basic-LSTM cells and as
//! `[x_t; meta_h_{t-1}; basic_h_{t-1}]` for the Meta-LSTM.
//!
//! The functions here evaluate directly on [`Matrix`]/[`Vector`] values; the
//! differentiable counterparts live in [`recorded`].

pub mod recorded;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, Matrix, ParamStore, Vector};

/// Gate block suffixes in stacking order.
pub const GATES: [&str; 4] = ["g", "o", "i", "f"];

/// Index of the forget gate block.
pub const FORGET: usize = 3;

/// Hidden/memory pair of any LSTM-family cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Vector,
    pub c: Vector,
}

impl CellState {
    pub fn zeros(size: usize) -> Self {
        CellState {
            h: Vector::zeros(size),
            c: Vector::zeros(size),
        }
    }

    pub fn size(&self) -> usize {
        self.h.len()
    }
}

/// Standard LSTM: `W` is `4h x (d + h)`, `b` has `4h` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w: Matrix,
    pub b: Vector,
}

impl LstmParams {
    pub fn zeros(d: usize, h: usize) -> Self {
        LstmParams {
            w: Matrix::zeros(4 * h, d + h),
            b: Vector::zeros(4 * h),
        }
    }

    /// Glorot-uniform weights, zero bias except the forget block at 1.0.
    pub fn init<R: Rng + ?Sized>(d: usize, h: usize, rng: &mut R) -> Self {
        let mut b = Vector::zeros(4 * h);
        for v in &mut b.as_mut_slice()[FORGET * h..] {
            *v = 1.0;
        }
        LstmParams {
            w: Matrix::xavier(4 * h, d + h, rng),
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.b.len() / 4
    }

    pub fn input(&self) -> usize {
        self.w.cols() - self.hidden()
    }

    pub fn count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn write_to(&self, store: &mut ParamStore, prefix: &str) -> Result<()> {
        store.insert(format!("{prefix}.W"), self.w.clone())?;
        store.insert(format!("{prefix}.b"), self.b.to_column())?;
        Ok(())
    }

    pub fn read_from(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(LstmParams {
            w: store.value(&format!("{prefix}.W"))?.clone(),
            b: Vector::from_matrix(store.value(&format!("{prefix}.b"))?),
        })
    }
}

/// Low-rank factors of a Basic-LSTM, one `(P, Q, B)` triple per gate block.
///
/// `P` and `B` are `h x z`; `Q` is `z x (d + h)` so that
/// `P diag(z_t) Q` conforms to a `h x (d + h)` gate block.
#[derive(Clone, Debug, PartialEq)]
pub struct BasicLstmParams {
    pub p: [Matrix; 4],
    pub q: [Matrix; 4],
    pub b: [Matrix; 4],
}

impl BasicLstmParams {
    pub fn zeros(d: usize, h: usize, z: usize) -> Self {
        BasicLstmParams {
            p: std::array::from_fn(|_| Matrix::zeros(h, z)),
            q: std::array::from_fn(|_| Matrix::zeros(z, d + h)),
            b: std::array::from_fn(|_| Matrix::zeros(h, z)),
        }
    }

    /// Glorot-uniform factors; the forget-bias generator `B_f` starts at zero.
    pub fn init<R: Rng + ?Sized>(d: usize, h: usize, z: usize, rng: &mut R) -> Self {
        let p = std::array::from_fn(|_| Matrix::xavier(h, z, rng));
        let q = std::array::from_fn(|_| Matrix::xavier(z, d + h, rng));
        let b = std::array::from_fn(|k| {
            if k == FORGET {
                Matrix::zeros(h, z)
            } else {
                Matrix::xavier(h, z, rng)
            }
        });
        BasicLstmParams { p, q, b }
    }

    pub fn hidden(&self) -> usize {
        self.p[0].rows()
    }

    pub fn meta_dim(&self) -> usize {
        self.p[0].cols()
    }

    pub fn input(&self) -> usize {
        self.q[0].cols() - self.hidden()
    }

    /// Count of `P` and `Q` entries (excludes the bias generators).
    pub fn count_factors(&self) -> usize {
        self.p.iter().chain(&self.q).map(Matrix::len).sum()
    }

    pub fn count(&self) -> usize {
        self.count_factors() + self.b.iter().map(Matrix::len).sum::<usize>()
    }

    pub fn write_to(&self, store: &mut ParamStore, prefix: &str) -> Result<()> {
        for (k, gate) in GATES.iter().enumerate() {
            store.insert(format!("{prefix}.P_{gate}"), self.p[k].clone())?;
            store.insert(format!("{prefix}.Q_{gate}"), self.q[k].clone())?;
            store.insert(format!("{prefix}.B_{gate}"), self.b[k].clone())?;
        }
        Ok(())
    }

    pub fn read_from(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |kind: &str, k: usize| -> Result<Matrix> {
            Ok(store.value(&format!("{prefix}.{kind}_{}", GATES[k]))?.clone())
        };
        let mut out = BasicLstmParams::zeros(0, 0, 0);
        for k in 0..4 {
            out.p[k] = get("P", k)?;
            out.q[k] = get("Q", k)?;
            out.b[k] = get("B", k)?;
        }
        Ok(out)
    }
}

/// Meta-LSTM controller: `W_m` is `4m x (d + m + h)`, `W_z` is `z x m`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaLstmParams {
    pub w_m: Matrix,
    pub b_m: Vector,
    pub w_z: Matrix,
}

/// Tensor names of a Meta-LSTM under `prefix`.
pub fn meta_param_names(prefix: &str) -> [String; 3] {
    [
        format!("{prefix}.W_m"),
        format!("{prefix}.b_m"),
        format!("{prefix}.W_z"),
    ]
}

impl MetaLstmParams {
    pub fn zeros(d: usize, h: usize, m: usize, z: usize) -> Self {
        MetaLstmParams {
            w_m: Matrix::zeros(4 * m, d + m + h),
            b_m: Vector::zeros(4 * m),
            w_z: Matrix::zeros(z, m),
        }
    }

    pub fn init<R: Rng + ?Sized>(d: usize, h: usize, m: usize, z: usize, rng: &mut R) -> Self {
        let mut b_m = Vector::zeros(4 * m);
        for v in &mut b_m.as_mut_slice()[FORGET * m..] {
            *v = 1.0;
        }
        MetaLstmParams {
            w_m: Matrix::xavier(4 * m, d + m + h, rng),
            b_m,
            w_z: Matrix::xavier(z, m, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_m.len() / 4
    }

    pub fn meta_dim(&self) -> usize {
        self.w_z.rows()
    }

    pub fn count(&self) -> usize {
        self.w_m.len() + self.b_m.len() + self.w_z.len()
    }

    pub fn write_to(&self, store: &mut ParamStore, prefix: &str) -> Result<()> {
        let [w_m, b_m, w_z] = meta_param_names(prefix);
        store.insert(w_m, self.w_m.clone())?;
        store.insert(b_m, self.b_m.to_column())?;
        store.insert(w_z, self.w_z.clone())?;
        Ok(())
    }

    pub fn read_from(store: &ParamStore, prefix: &str) -> Result<Self> {
        let [w_m, b_m, w_z] = meta_param_names(prefix);
        Ok(MetaLstmParams {
            w_m: store.value(&w_m)?.clone(),
            b_m: Vector::from_matrix(store.value(&b_m)?),
            w_z: store.value(&w_z)?.clone(),
        })
    }
}

fn check_len(op: &'static str, what: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::shape(
            op,
            format!("{what}: expected length {expected}, found {found}"),
        ));
    }
    Ok(())
}

/// Applies the gate nonlinearities to stacked pre-activations and updates the cell.
fn gate_update(pre: &Vector, c_prev: &Vector) -> CellState {
    let h = c_prev.len();
    let pre = pre.as_slice();
    let mut c = Vector::zeros(h);
    let mut out = Vector::zeros(h);
    for j in 0..h {
        let g = pre[j].tanh();
        let o = sigmoid(pre[h + j]);
        let i = sigmoid(pre[2 * h + j]);
        let f = sigmoid(pre[3 * h + j]);
        c[j] = g * i + c_prev[j] * f;
        out[j] = o * c[j].tanh();
    }
    CellState { h: out, c }
}

/// Gate activations `(g, o, i, f)` for stacked pre-activations.
pub fn gate_activations(pre: &Vector) -> [Vector; 4] {
    let h = pre.len() / 4;
    std::array::from_fn(|k| {
        let block = pre.slice(k * h, h);
        if k == 0 {
            block.map(f64::tanh)
        } else {
            block.map(sigmoid)
        }
    })
}

/// Pre-activations `W [x; h_prev] + b` of a standard LSTM step.
pub fn lstm_preactivation(w: &Matrix, b: &Vector, x: &Vector, h_prev: &Vector) -> Result<Vector> {
    let hidden = b.len() / 4;
    check_len("lstm_step", "bias", 4 * hidden, b.len())?;
    check_len("lstm_step", "weight rows", 4 * hidden, w.rows())?;
    check_len("lstm_step", "hidden state", hidden, h_prev.len())?;
    check_len("lstm_step", "input", w.cols() - hidden.min(w.cols()), x.len())?;
    let inp = Vector::concat(&[x, h_prev]);
    Ok(w.matvec(&inp)?.add(b))
}

/// One standard LSTM update.
pub fn lstm_step(p: &LstmParams, x: &Vector, s: &CellState) -> Result<CellState> {
    check_len("lstm_step", "memory cell", s.h.len(), s.c.len())?;
    let pre = lstm_preactivation(&p.w, &p.b, x, &s.h)?;
    Ok(gate_update(&pre, &s.c))
}

/// Materialises `W(z_t)` and `b(z_t)`: gate block `k` of the weight is
/// `P_k diag(z_t) Q_k` and of the bias `B_k z_t`.
pub fn make_dynamic_weights(bp: &BasicLstmParams, z_t: &Vector) -> Result<(Matrix, Vector)> {
    check_len("make_dynamic_weights", "meta vector", bp.meta_dim(), z_t.len())?;
    let mut blocks = Vec::with_capacity(4);
    let mut bias = Vec::with_capacity(4 * bp.hidden());
    for k in 0..4 {
        let (p, q, b) = (&bp.p[k], &bp.q[k], &bp.b[k]);
        if q.rows() != z_t.len() || b.cols() != z_t.len() || p.cols() != z_t.len() {
            return Err(Error::shape("make_dynamic_weights", format!("gate {} factors", GATES[k])));
        }
        let scaled = Matrix::from_fn(p.rows(), p.cols(), |r, c| p.get(r, c) * z_t[c]);
        blocks.push(scaled.matmul(q)?);
        bias.extend_from_slice(b.matvec(z_t)?.as_slice());
    }
    let refs: Vec<&Matrix> = blocks.iter().collect();
    Ok((Matrix::vstack(&refs)?, Vector::from_vec(bias)))
}

/// Basic-LSTM step: the standard update with weights generated from `z_t`.
pub fn basic_lstm_step(
    bp: &BasicLstmParams,
    z_t: &Vector,
    x: &Vector,
    s: &CellState,
) -> Result<CellState> {
    let (w, b) = make_dynamic_weights(bp, z_t)?;
    lstm_step(&LstmParams { w, b }, x, s)
}

/// Meta-LSTM step over `[x_t; meta_h_{t-1}; basic_h_{t-1}]`, returning the new
/// controller state and `z_t = W_z meta_h_t`.
pub fn meta_lstm_step(
    mp: &MetaLstmParams,
    x: &Vector,
    h_basic_prev: &Vector,
    ms: &CellState,
) -> Result<(CellState, Vector)> {
    let m = mp.hidden();
    check_len("meta_lstm_step", "meta state", m, ms.h.len())?;
    check_len("meta_lstm_step", "meta memory", m, ms.c.len())?;
    check_len(
        "meta_lstm_step",
        "input + basic state",
        mp.w_m.cols() - m.min(mp.w_m.cols()),
        x.len() + h_basic_prev.len(),
    )?;
    let inp = Vector::concat(&[x, &ms.h, h_basic_prev]);
    let pre = mp.w_m.matvec(&inp)?.add(&mp.b_m);
    let next = gate_update(&pre, &ms.c);
    let z = mp.w_z.matvec(&next.h)?;
    Ok((next, z))
}

/// One timestep of the composite: the controller runs first and its `z_t`
/// drives the Basic-LSTM update.
pub fn meta_stack_step(
    mp: &MetaLstmParams,
    bp: &BasicLstmParams,
    x: &Vector,
    ms: &CellState,
    bs: &CellState,
) -> Result<(CellState, CellState, Vector)> {
    let (ms_next, z) = meta_lstm_step(mp, x, &bs.h, ms)?;
    let bs_next = basic_lstm_step(bp, &z, x, bs)?;
    Ok((ms_next, bs_next, z))
}

/// Cell selector for sequence runners.
#[derive(Clone, Copy, Debug)]
pub enum Cell<'a> {
    Lstm(&'a LstmParams),
    MetaStack {
        meta: &'a MetaLstmParams,
        basic: &'a BasicLstmParams,
    },
}

impl Cell<'_> {
    pub fn hidden(&self) -> usize {
        match self {
            Cell::Lstm(p) => p.hidden(),
            Cell::MetaStack { basic, .. } => basic.hidden(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SequenceOutput {
    /// Hidden state after each position.
    pub hs: Vec<Vector>,
    pub state: CellState,
    /// Controller state, for the Meta-LSTM composite.
    pub meta_state: Option<CellState>,
    /// Meta vectors `z_t`, for the Meta-LSTM composite.
    pub zs: Vec<Vector>,
}

/// Runs a cell over `xs` from zero initial states.
pub fn run_sequence(cell: Cell<'_>, xs: &[Vector]) -> Result<SequenceOutput> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("run_sequence"));
    }
    let mut hs = Vec::with_capacity(xs.len());
    match cell {
        Cell::Lstm(p) => {
            let mut s = CellState::zeros(p.hidden());
            for x in xs {
                s = lstm_step(p, x, &s)?;
                hs.push(s.h.clone());
            }
            Ok(SequenceOutput {
                hs,
                state: s,
                meta_state: None,
                zs: Vec::new(),
            })
        }
        Cell::MetaStack { meta, basic } => {
            let mut ms = CellState::zeros(meta.hidden());
            let mut bs = CellState::zeros(basic.hidden());
            let mut zs = Vec::with_capacity(xs.len());
            for x in xs {
                let (m_next, b_next, z) = meta_stack_step(meta, basic, x, &ms, &bs)?;
                ms = m_next;
                bs = b_next;
                hs.push(bs.h.clone());
                zs.push(z);
            }
            Ok(SequenceOutput {
                hs,
                state: bs,
                meta_state: Some(ms),
                zs,
            })
        }
    }
}

/// Forward pass over `xs` and backward pass over the reversed sequence;
/// position `t` yields `[fwd_h_t; bwd_h_t]`.
pub fn bidirectional_encode(fwd: Cell<'_>, bwd: Cell<'_>, xs: &[Vector]) -> Result<Vec<Vector>> {
    let forward = run_sequence(fwd, xs)?;
    let reversed: Vec<Vector> = xs.iter().rev().cloned().collect();
    let mut backward = run_sequence(bwd, &reversed)?.hs;
    backward.reverse();
    Ok(forward
        .hs
        .iter()
        .zip(&backward)
        .map(|(f, b)| Vector::concat(&[f, b]))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Standard,
    Basic,
    Meta,
    /// Meta-LSTM plus Basic-LSTM.
    MetaStack,
}

/// Parameter counts in closed form. `formula` follows the published
/// accounting, which leaves out the Basic-LSTM bias generators `B_*`;
/// `with_bias` adds their `4hz` entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub formula: usize,
    pub with_bias: usize,
}

pub fn count_params(kind: CellKind, d: usize, h: usize, m: usize, z: usize) -> ParamCount {
    let standard = 4 * h * h + 4 * h * d + 4 * h;
    let basic = 8 * h * z + 4 * d * z;
    let meta = 4 * m * (d + h + m + 1) + m * z;
    let bias_gen = 4 * h * z;
    match kind {
        CellKind::Standard => ParamCount {
            formula: standard,
            with_bias: standard,
        },
        CellKind::Basic => ParamCount {
            formula: basic,
            with_bias: basic + bias_gen,
        },
        CellKind::Meta => ParamCount {
            formula: meta,
            with_bias: meta,
        },
        CellKind::MetaStack => ParamCount {
            formula: meta + basic,
            with_bias: meta + basic + bias_gen,
        },
    }
}
