//! Task output layers: softmax classification and a linear-chain CRF.
//!
//! A CRF path `y_1..y_T` scores
//! `start[y_1] + sum_t emit_t[y_t] + sum_t trans[y_{t-1}][y_t] + stop[y_T]`,
//! where `emit_t = E rep_t`. The partition function is computed in log space.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, softmax, Matrix, ParamStore, Tape, Var, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub w: Matrix,
    pub b: Vector,
}

impl ClassifierParams {
    pub fn init<R: Rng + ?Sized>(n_classes: usize, rep_dim: usize, rng: &mut R) -> Self {
        ClassifierParams {
            w: Matrix::xavier(n_classes, rep_dim, rng),
            b: Vector::zeros(n_classes),
        }
    }

    pub fn write_to(&self, store: &mut ParamStore, prefix: &str) -> Result<()> {
        store.insert(format!("{prefix}.W"), self.w.clone())?;
        store.insert(format!("{prefix}.b"), self.b.to_column())?;
        Ok(())
    }

    pub fn read_from(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(ClassifierParams {
            w: store.value(&format!("{prefix}.W"))?.clone(),
            b: Vector::from_matrix(store.value(&format!("{prefix}.b"))?),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.b.len()
    }

    pub fn logits(&self, rep: &Vector) -> Result<Vector> {
        if rep.len() != self.w.cols() {
            return Err(Error::shape(
                "classify",
                format!("representation of {} for a {}-wide head", rep.len(), self.w.cols()),
            ));
        }
        Ok(self.w.matvec(rep)?.add(&self.b))
    }
}

/// `softmax(W rep + b)`.
pub fn classify(rep: &Vector, p: &ClassifierParams) -> Result<Vector> {
    let logits = p.logits(rep)?;
    Ok(Vector::from_vec(softmax(logits.as_slice())))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams {
    pub emit: Matrix,
    pub trans: Matrix,
    pub start: Vector,
    pub stop: Vector,
}

impl CrfParams {
    pub fn zeros(n_tags: usize, rep_dim: usize) -> Self {
        CrfParams {
            emit: Matrix::zeros(n_tags, rep_dim),
            trans: Matrix::zeros(n_tags, n_tags),
            start: Vector::zeros(n_tags),
            stop: Vector::zeros(n_tags),
        }
    }

    pub fn init<R: Rng + ?Sized>(n_tags: usize, rep_dim: usize, rng: &mut R) -> Self {
        CrfParams {
            emit: Matrix::xavier(n_tags, rep_dim, rng),
            trans: Matrix::uniform(n_tags, n_tags, 0.1, rng),
            start: Vector::zeros(n_tags),
            stop: Vector::zeros(n_tags),
        }
    }

    pub fn n_tags(&self) -> usize {
        self.trans.rows()
    }

    pub fn write_to(&self, store: &mut ParamStore, prefix: &str) -> Result<()> {
        store.insert(format!("{prefix}.emit"), self.emit.clone())?;
        store.insert(format!("{prefix}.trans"), self.trans.clone())?;
        store.insert(format!("{prefix}.start"), self.start.to_column())?;
        store.insert(format!("{prefix}.stop"), self.stop.to_column())?;
        Ok(())
    }

    pub fn read_from(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(CrfParams {
            emit: store.value(&format!("{prefix}.emit"))?.clone(),
            trans: store.value(&format!("{prefix}.trans"))?.clone(),
            start: Vector::from_matrix(store.value(&format!("{prefix}.start"))?),
            stop: Vector::from_matrix(store.value(&format!("{prefix}.stop"))?),
        })
    }

    /// Per-position emission scores `E rep_t`.
    pub fn emissions(&self, reps: &[Vector]) -> Result<Vec<Vector>> {
        reps.iter().map(|r| self.emit.matvec(r)).collect()
    }

    fn check(&self, op: &'static str, emissions: &[Vector]) -> Result<()> {
        if emissions.is_empty() {
            return Err(Error::EmptyInput(op));
        }
        let n = self.n_tags();
        if self.trans.cols() != n || self.start.len() != n || self.stop.len() != n {
            return Err(Error::shape(op, "inconsistent CRF parameter shapes"));
        }
        if let Some(e) = emissions.iter().find(|e| e.len() != n) {
            return Err(Error::shape(op, format!("emission of {} for {n} tags", e.len())));
        }
        Ok(())
    }

    /// Unnormalised score of one tag path.
    pub fn path_score(&self, emissions: &[Vector], tags: &[usize]) -> Result<f64> {
        self.check("crf_path_score", emissions)?;
        if tags.len() != emissions.len() {
            return Err(Error::shape(
                "crf_path_score",
                format!("{} tags for {} positions", tags.len(), emissions.len()),
            ));
        }
        let n = self.n_tags();
        if let Some(&bad) = tags.iter().find(|&&t| t >= n) {
            return Err(Error::InvalidTag {
                index: bad,
                n_tags: n,
            });
        }
        let mut s = self.start[tags[0]] + self.stop[tags[tags.len() - 1]];
        for (t, e) in emissions.iter().enumerate() {
            s += e[tags[t]];
            if t > 0 {
                s += self.trans.get(tags[t - 1], tags[t]);
            }
        }
        Ok(s)
    }
}

/// Log of the sum over all tag paths of `exp(score)`, by the forward algorithm.
pub fn crf_log_partition(emissions: &[Vector], p: &CrfParams) -> Result<f64> {
    p.check("crf_log_partition", emissions)?;
    let n = p.n_tags();
    let mut alpha: Vec<f64> = (0..n).map(|j| p.start[j] + emissions[0][j]).collect();
    let mut scratch = vec![0.0; n];
    for e in &emissions[1..] {
        let next: Vec<f64> = (0..n)
            .map(|j| {
                for (i, s) in scratch.iter_mut().enumerate() {
                    *s = alpha[i] + p.trans.get(i, j);
                }
                log_sum_exp(&scratch) + e[j]
            })
            .collect();
        alpha = next;
    }
    for (j, a) in alpha.iter_mut().enumerate() {
        *a += p.stop[j];
    }
    Ok(log_sum_exp(&alpha))
}

/// `log Z - score(gold)`.
pub fn crf_nll(emissions: &[Vector], p: &CrfParams, tags: &[usize]) -> Result<f64> {
    let gold = p.path_score(emissions, tags)?;
    Ok(crf_log_partition(emissions, p)? - gold)
}

/// Highest-scoring path and its score. Ties resolve to the lower tag index.
pub fn crf_viterbi(emissions: &[Vector], p: &CrfParams) -> Result<(Vec<usize>, f64)> {
    p.check("crf_viterbi", emissions)?;
    let n = p.n_tags();
    let mut delta: Vec<f64> = (0..n).map(|j| p.start[j] + emissions[0][j]).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(emissions.len());
    for e in &emissions[1..] {
        let mut next = vec![0.0; n];
        let mut ptr = vec![0; n];
        for j in 0..n {
            let mut best = 0;
            let mut best_score = delta[0] + p.trans.get(0, j);
            for i in 1..n {
                let s = delta[i] + p.trans.get(i, j);
                if s > best_score {
                    best = i;
                    best_score = s;
                }
            }
            next[j] = best_score + e[j];
            ptr[j] = best;
        }
        delta = next;
        back.push(ptr);
    }
    let mut last = 0;
    let mut best_score = delta[0] + p.stop[0];
    for j in 1..n {
        let s = delta[j] + p.stop[j];
        if s > best_score {
            last = j;
            best_score = s;
        }
    }
    let mut path = vec![last];
    for ptr in back.iter().rev() {
        let prev = ptr[*path.last().expect("non-empty")];
        path.push(prev);
    }
    path.reverse();
    Ok((path, best_score))
}

/// Classifier tensors on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ClassifierVars {
    pub w: Var,
    pub b: Var,
}

impl ClassifierVars {
    pub fn register(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(ClassifierVars {
            w: tape.param(store, &format!("{prefix}.W"))?,
            b: tape.param(store, &format!("{prefix}.b"))?,
        })
    }

    pub fn logits(&self, tape: &mut Tape, rep: Var) -> Result<Var> {
        let wx = tape.matmul(self.w, rep)?;
        tape.add(wx, self.b)
    }

    /// Cross-entropy `-log softmax(logits)[label]`.
    pub fn loss(&self, tape: &mut Tape, rep: Var, label: usize) -> Result<Var> {
        let logits = self.logits(tape, rep)?;
        let n = tape.value(logits).rows();
        if label >= n {
            return Err(Error::InvalidLabel {
                label,
                n_classes: n,
            });
        }
        let lse = tape.log_sum_exp(logits)?;
        let gold = tape.element(logits, label, 0)?;
        tape.sub(lse, gold)
    }
}

/// CRF tensors on a tape.
#[derive(Clone, Copy, Debug)]
pub struct CrfVars {
    pub emit: Var,
    pub trans: Var,
    pub start: Var,
    pub stop: Var,
}

impl CrfVars {
    pub fn register(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(CrfVars {
            emit: tape.param(store, &format!("{prefix}.emit"))?,
            trans: tape.param(store, &format!("{prefix}.trans"))?,
            start: tape.param(store, &format!("{prefix}.start"))?,
            stop: tape.param(store, &format!("{prefix}.stop"))?,
        })
    }

    pub fn emissions(&self, tape: &mut Tape, reps: &[Var]) -> Result<Vec<Var>> {
        reps.iter().map(|&r| tape.matmul(self.emit, r)).collect()
    }

    pub fn log_partition(&self, tape: &mut Tape, emissions: &[Var]) -> Result<Var> {
        let (first, rest) = emissions
            .split_first()
            .ok_or(Error::EmptyInput("crf_log_partition"))?;
        let mut alpha = tape.add(self.start, *first)?;
        for &e in rest {
            let carried = tape.log_mat_vec(alpha, self.trans)?;
            alpha = tape.add(carried, e)?;
        }
        let end = tape.add(alpha, self.stop)?;
        tape.log_sum_exp(end)
    }

    pub fn path_score(&self, tape: &mut Tape, emissions: &[Var], tags: &[usize]) -> Result<Var> {
        if tags.len() != emissions.len() || tags.is_empty() {
            return Err(Error::shape(
                "crf_path_score",
                format!("{} tags for {} positions", tags.len(), emissions.len()),
            ));
        }
        let n = tape.value(self.trans).rows();
        if let Some(&bad) = tags.iter().find(|&&t| t >= n) {
            return Err(Error::InvalidTag {
                index: bad,
                n_tags: n,
            });
        }
        let mut terms = vec![
            tape.element(self.start, tags[0], 0)?,
            tape.element(self.stop, tags[tags.len() - 1], 0)?,
        ];
        for (t, &e) in emissions.iter().enumerate() {
            terms.push(tape.element(e, tags[t], 0)?);
            if t > 0 {
                terms.push(tape.element(self.trans, tags[t - 1], tags[t])?);
            }
        }
        let stacked = tape.concat(&terms)?;
        tape.sum(stacked)
    }

    pub fn nll(&self, tape: &mut Tape, reps: &[Var], tags: &[usize]) -> Result<Var> {
        let emissions = self.emissions(tape, reps)?;
        let gold = self.path_score(tape, &emissions, tags)?;
        let log_z = self.log_partition(tape, &emissions)?;
        tape.sub(log_z, gold)
    }
}
