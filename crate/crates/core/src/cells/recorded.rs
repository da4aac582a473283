//! Differentiable cell steps recorded on a [`Tape`].
//!
//! The Basic-LSTM here never materialises `W(z_t)`: each gate block applies
//! `P_k (z_t ⊙ (Q_k v))`, which equals `P_k diag(z_t) Q_k v` and lets
//! gradients reach `P`, `Q`, `B` and `z_t` through cheap matrix-vector products.

use crate::cells::{meta_param_names, GATES};
use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tape, Var};

/// `(h, c)` pair recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TapeState {
    pub h: Var,
    pub c: Var,
}

impl TapeState {
    pub fn zeros(tape: &mut Tape, size: usize) -> Self {
        TapeState {
            h: tape.constant_column(&vec![0.0; size]),
            c: tape.constant_column(&vec![0.0; size]),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w: Var,
    pub b: Var,
    pub hidden: usize,
}

impl LstmVars {
    pub fn register(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        let w = tape.param(store, &format!("{prefix}.W"))?;
        let b = tape.param(store, &format!("{prefix}.b"))?;
        let hidden = tape.value(b).rows() / 4;
        Ok(LstmVars { w, b, hidden })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BasicVars {
    pub p: [Var; 4],
    pub q: [Var; 4],
    pub b: [Var; 4],
    pub hidden: usize,
}

impl BasicVars {
    pub fn register(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut get = |kind: &str, k: usize| tape.param(store, &format!("{prefix}.{kind}_{}", GATES[k]));
        let mut p = Vec::with_capacity(4);
        let mut q = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for k in 0..4 {
            p.push(get("P", k)?);
            q.push(get("Q", k)?);
            b.push(get("B", k)?);
        }
        let hidden = tape.value(p[0]).rows();
        Ok(BasicVars {
            p: p.try_into().expect("four gates"),
            q: q.try_into().expect("four gates"),
            b: b.try_into().expect("four gates"),
            hidden,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MetaVars {
    pub w_m: Var,
    pub b_m: Var,
    pub w_z: Var,
    pub hidden: usize,
}

impl MetaVars {
    pub fn register(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        let [w_m, b_m, w_z] = meta_param_names(prefix);
        let w_m = tape.param(store, &w_m)?;
        let b_m = tape.param(store, &b_m)?;
        let w_z = tape.param(store, &w_z)?;
        let hidden = tape.value(b_m).rows() / 4;
        Ok(MetaVars {
            w_m,
            b_m,
            w_z,
            hidden,
        })
    }
}

fn gate_update(tape: &mut Tape, pre: [Var; 4], c_prev: Var) -> Result<TapeState> {
    let g = tape.tanh(pre[0])?;
    let o = tape.sigmoid(pre[1])?;
    let i = tape.sigmoid(pre[2])?;
    let f = tape.sigmoid(pre[3])?;
    let gi = tape.mul(g, i)?;
    let cf = tape.mul(c_prev, f)?;
    let c = tape.add(gi, cf)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok(TapeState { h, c })
}

fn split_gates(tape: &mut Tape, pre: Var, hidden: usize) -> Result<[Var; 4]> {
    Ok([
        tape.rows(pre, 0, hidden)?,
        tape.rows(pre, hidden, hidden)?,
        tape.rows(pre, 2 * hidden, hidden)?,
        tape.rows(pre, 3 * hidden, hidden)?,
    ])
}

pub fn lstm_step(tape: &mut Tape, p: &LstmVars, x: Var, s: TapeState) -> Result<TapeState> {
    let inp = tape.concat(&[x, s.h])?;
    let wx = tape.matmul(p.w, inp)?;
    let pre = tape.add(wx, p.b)?;
    let gates = split_gates(tape, pre, p.hidden)?;
    gate_update(tape, gates, s.c)
}

pub fn basic_lstm_step(
    tape: &mut Tape,
    p: &BasicVars,
    z: Var,
    x: Var,
    s: TapeState,
) -> Result<TapeState> {
    let inp = tape.concat(&[x, s.h])?;
    let mut pre = [inp; 4];
    for k in 0..4 {
        let qv = tape.matmul(p.q[k], inp)?;
        let zq = tape.mul(z, qv)?;
        let wv = tape.matmul(p.p[k], zq)?;
        let bz = tape.matmul(p.b[k], z)?;
        pre[k] = tape.add(wv, bz)?;
    }
    gate_update(tape, pre, s.c)
}

pub fn meta_lstm_step(
    tape: &mut Tape,
    p: &MetaVars,
    x: Var,
    h_basic_prev: Var,
    ms: TapeState,
) -> Result<(TapeState, Var)> {
    let inp = tape.concat(&[x, ms.h, h_basic_prev])?;
    let wx = tape.matmul(p.w_m, inp)?;
    let pre = tape.add(wx, p.b_m)?;
    let gates = split_gates(tape, pre, p.hidden)?;
    let next = gate_update(tape, gates, ms.c)?;
    let z = tape.matmul(p.w_z, next.h)?;
    Ok((next, z))
}

pub fn meta_stack_step(
    tape: &mut Tape,
    meta: &MetaVars,
    basic: &BasicVars,
    x: Var,
    ms: TapeState,
    bs: TapeState,
) -> Result<(TapeState, TapeState, Var)> {
    let (ms_next, z) = meta_lstm_step(tape, meta, x, bs.h, ms)?;
    let bs_next = basic_lstm_step(tape, basic, z, x, bs)?;
    Ok((ms_next, bs_next, z))
}

#[derive(Clone, Copy, Debug)]
pub enum TapeCell {
    Lstm(LstmVars),
    MetaStack { meta: MetaVars, basic: BasicVars },
}

impl TapeCell {
    pub fn hidden(&self) -> usize {
        match self {
            TapeCell::Lstm(p) => p.hidden,
            TapeCell::MetaStack { basic, .. } => basic.hidden,
        }
    }
}

/// Hidden states per position, from zero initial states.
pub fn run_sequence(tape: &mut Tape, cell: &TapeCell, xs: &[Var]) -> Result<Vec<Var>> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("run_sequence"));
    }
    let mut hs = Vec::with_capacity(xs.len());
    match cell {
        TapeCell::Lstm(p) => {
            let mut s = TapeState::zeros(tape, p.hidden);
            for &x in xs {
                s = lstm_step(tape, p, x, s)?;
                hs.push(s.h);
            }
        }
        TapeCell::MetaStack { meta, basic } => {
            let mut ms = TapeState::zeros(tape, meta.hidden);
            let mut bs = TapeState::zeros(tape, basic.hidden);
            for &x in xs {
                let (m_next, b_next, _) = meta_stack_step(tape, meta, basic, x, ms, bs)?;
                ms = m_next;
                bs = b_next;
                hs.push(bs.h);
            }
        }
    }
    Ok(hs)
}

/// `[fwd_h_t; bwd_h_t]` per position.
pub fn bidirectional_encode(
    tape: &mut Tape,
    fwd: &TapeCell,
    bwd: &TapeCell,
    xs: &[Var],
) -> Result<Vec<Var>> {
    let forward = run_sequence(tape, fwd, xs)?;
    let reversed: Vec<Var> = xs.iter().rev().copied().collect();
    let mut backward = run_sequence(tape, bwd, &reversed)?;
    backward.reverse();
    forward
        .into_iter()
        .zip(backward)
        .map(|(f, b)| tape.concat(&[f, b]))
        .collect()
}
