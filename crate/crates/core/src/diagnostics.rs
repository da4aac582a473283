//! Metrics, weight-change traces, parameter reports and model gradient checks.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cells::{
    count_params, make_dynamic_weights, meta_stack_step, BasicLstmParams, CellKind, CellState,
    MetaLstmParams, GATES,
};
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::heads::ClassifierParams;
use crate::multitask::{MultiTaskModel, Prediction, EMBED};
use crate::numeric::{grad_check, GradCheckReport, Matrix, ParamStore, Vector};
use crate::task::{Example, HeadKind, Label};

/// Denominator guard for relative weight change.
pub const WEIGHT_CHANGE_DELTA: f64 = 1e-8;

/// Mean of `|W_t - W_prev| / (|W_prev| + delta)` over all entries.
pub fn weight_change(w_t: &Matrix, w_prev: &Matrix) -> Result<f64> {
    if w_t.shape() != w_prev.shape() {
        return Err(Error::shape(
            "weight_change",
            format!("{:?} against {:?}", w_t.shape(), w_prev.shape()),
        ));
    }
    if w_t.is_empty() {
        return Err(Error::EmptyInput("weight_change"));
    }
    let total: f64 = w_t
        .as_slice()
        .iter()
        .zip(w_prev.as_slice())
        .map(|(a, b)| (a - b).abs() / (b.abs() + WEIGHT_CHANGE_DELTA))
        .sum();
    Ok(total / w_t.len() as f64)
}

/// Relative change of each generated gate block, by gate name.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateDiffs {
    pub i: f64,
    pub g: f64,
    pub f: f64,
    pub o: f64,
}

impl GateDiffs {
    pub fn max(&self) -> f64 {
        self.i.max(self.g).max(self.f).max(self.o)
    }

    pub fn mean(&self) -> f64 {
        (self.i + self.g + self.f + self.o) / 4.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    /// 1-based position.
    pub position: usize,
    pub token: String,
    /// `None` at the first position.
    pub diffs: Option<GateDiffs>,
    /// Positive minus negative logit on the prefix ending here.
    pub score: f64,
}

/// Steps a meta-architecture classifier over `tokens`, recording how much
/// each gate block of the generated weight matrix moves per step.
pub fn trace_sequence(
    model: &MultiTaskModel,
    k: usize,
    tokens: &[usize],
    vocab: &Vocab,
) -> Result<Vec<TraceRecord>> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("trace_sequence"));
    }
    let task = model.tasks.get(k).ok_or_else(|| Error::UnknownTask(format!("#{k}")))?;
    if !matches!(task.head, HeadKind::Classification { n_classes } if n_classes >= 2) {
        return Err(Error::Unsupported(
            "traces need a classification task with at least two classes".into(),
        ));
    }
    let meta_store = model
        .meta_store(k)
        .ok_or_else(|| Error::Unsupported(format!("no Meta-LSTM in a {} model", model.arch)))?;
    let meta = MetaLstmParams::read_from(meta_store, "meta.fwd")?;
    let basic = BasicLstmParams::read_from(&model.private[k], "basic.fwd")?;
    let head = ClassifierParams::read_from(&model.private[k], "head")?;
    let table = model.embedding_store(k).value(EMBED)?;
    let h = basic.hidden();

    let mut ms = CellState::zeros(meta.hidden());
    let mut bs = CellState::zeros(h);
    let mut prev: Option<Matrix> = None;
    let mut out = Vec::with_capacity(tokens.len());
    for (t, &tok) in tokens.iter().enumerate() {
        if tok >= table.rows() {
            return Err(Error::shape("trace_sequence", format!("token {tok} outside the table")));
        }
        let x = Vector::from_vec(table.row(tok).to_vec());
        let (m_next, b_next, z) = meta_stack_step(&meta, &basic, &x, &ms, &bs)?;
        let (w, _) = make_dynamic_weights(&basic, &z)?;
        let diffs = match &prev {
            None => None,
            Some(p) => {
                let block = |gate: &str| -> Result<f64> {
                    let g = GATES.iter().position(|&n| n == gate).expect("gate name");
                    weight_change(&w.slice_rows(g * h, h), &p.slice_rows(g * h, h))
                };
                Some(GateDiffs {
                    i: block("i")?,
                    g: block("g")?,
                    f: block("f")?,
                    o: block("o")?,
                })
            }
        };
        let logits = head.logits(&b_next.h)?;
        out.push(TraceRecord {
            position: t + 1,
            token: vocab.token(tok).unwrap_or("<unk>").to_string(),
            diffs,
            score: logits[1] - logits[0],
        });
        prev = Some(w);
        ms = m_next;
        bs = b_next;
    }
    Ok(out)
}

/// Tab-separated trace with a header row; `NA` where no diff exists.
pub fn format_trace(records: &[TraceRecord]) -> String {
    let mut s = String::from("pos\ttoken\tdiff_i\tdiff_g\tdiff_f\tdiff_o\tscore\n");
    for r in records {
        let _ = write!(s, "{}\t{}\t", r.position, r.token);
        match r.diffs {
            Some(d) => {
                let _ = write!(s, "{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t", d.i, d.g, d.f, d.o);
            }
            None => s.push_str("NA\tNA\tNA\tNA\t"),
        }
        let _ = writeln!(s, "{:.6}", r.score);
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpanScores {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SpanScores {
    pub fn from_counts(gold: usize, predicted: usize, correct: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        SpanScores {
            gold,
            predicted,
            correct,
            precision,
            recall,
            f1,
        }
    }
}

/// `(start, end_exclusive, type)` chunks of a BIO sequence. A stray `I-X`
/// that does not continue an `X` chunk opens a new one.
pub fn bio_spans<S: AsRef<str>>(tags: &[S]) -> Vec<(usize, usize, String)> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        let (prefix, kind) = match tag.split_once('-') {
            Some((p, k)) if p == "B" || p == "I" => (p, k),
            _ => ("O", ""),
        };
        let continues = prefix == "I" && matches!(&open, Some((_, t)) if t == kind);
        if continues {
            continue;
        }
        if let Some((s, t)) = open.take() {
            spans.push((s, i, t));
        }
        if prefix != "O" {
            open = Some((i, kind.to_string()));
        }
    }
    if let Some((s, t)) = open {
        spans.push((s, tags.len(), t));
    }
    spans
}

/// Exact-match chunk precision, recall and F1 over sentences.
pub fn span_f1<S: AsRef<str>>(gold: &[Vec<S>], predicted: &[Vec<S>]) -> SpanScores {
    let (mut g, mut p, mut c) = (0, 0, 0);
    for (gs, ps) in gold.iter().zip(predicted) {
        let gold_spans = bio_spans(gs);
        let pred_spans = bio_spans(ps);
        g += gold_spans.len();
        p += pred_spans.len();
        c += pred_spans.iter().filter(|s| gold_spans.contains(s)).count();
    }
    SpanScores::from_counts(g, p, c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub task: String,
    pub examples: usize,
    /// Task-weighted mean loss.
    pub loss: f64,
    /// Classification accuracy, or token accuracy for tagging.
    pub accuracy: f64,
    pub spans: Option<SpanScores>,
}

impl MetricReport {
    /// Accuracy for classification, span F1 for tagging.
    pub fn primary(&self) -> f64 {
        self.spans.map_or(self.accuracy, |s| s.f1)
    }

    /// `key<TAB>value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task\t{}", self.task);
        let _ = writeln!(s, "examples\t{}", self.examples);
        let _ = writeln!(s, "loss\t{:.6}", self.loss);
        match self.spans {
            None => {
                let _ = writeln!(s, "accuracy\t{:.6}", self.accuracy);
            }
            Some(sp) => {
                let _ = writeln!(s, "token_accuracy\t{:.6}", self.accuracy);
                let _ = writeln!(s, "precision\t{:.6}", sp.precision);
                let _ = writeln!(s, "recall\t{:.6}", sp.recall);
                let _ = writeln!(s, "f1\t{:.6}", sp.f1);
            }
        }
        s
    }
}

/// Worker threads for evaluation: `METALSTM_THREADS` if set, else the
/// available parallelism.
pub fn thread_budget() -> usize {
    std::env::var("METALSTM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Predictions and losses for every example, in order.
pub fn predict_all(model: &MultiTaskModel, k: usize, examples: &[Example]) -> Result<Vec<(Prediction, f64)>> {
    let threads = thread_budget().min(examples.len()).max(1);
    if threads == 1 {
        return examples.iter().map(|ex| model.evaluate_example(k, ex)).collect();
    }
    let chunk = examples.len().div_ceil(threads);
    let parts: Vec<Result<Vec<(Prediction, f64)>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = examples
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|ex| model.evaluate_example(k, ex)).collect()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(examples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn evaluate(model: &MultiTaskModel, k: usize, examples: &[Example]) -> Result<MetricReport> {
    let task = model.tasks.get(k).ok_or_else(|| Error::UnknownTask(format!("#{k}")))?;
    if examples.is_empty() {
        return Err(Error::EmptyInput("evaluation split"));
    }
    let results = predict_all(model, k, examples)?;
    let loss = task.lambda * results.iter().map(|(_, l)| l).sum::<f64>() / examples.len() as f64;
    match &task.head {
        HeadKind::Classification { .. } => {
            let correct = results
                .iter()
                .zip(examples)
                .filter(|((p, _), ex)| matches!((p, &ex.label), (Prediction::Class { label, .. }, Label::Class(y)) if label == y))
                .count();
            Ok(MetricReport {
                task: task.id.clone(),
                examples: examples.len(),
                loss,
                accuracy: correct as f64 / examples.len() as f64,
                spans: None,
            })
        }
        HeadKind::Tagging { tags } => {
            let mut gold = Vec::with_capacity(examples.len());
            let mut pred = Vec::with_capacity(examples.len());
            let (mut right, mut total) = (0usize, 0usize);
            for ((p, _), ex) in results.iter().zip(examples) {
                let (Prediction::Tags(path), Label::Tags(g)) = (p, &ex.label) else {
                    return Err(Error::Structural("tagging task produced a class prediction".into()));
                };
                right += path.iter().zip(g).filter(|(a, b)| a == b).count();
                total += g.len();
                gold.push(g.iter().map(|&i| tags[i].as_str()).collect::<Vec<_>>());
                pred.push(path.iter().map(|&i| tags[i].as_str()).collect::<Vec<_>>());
            }
            Ok(MetricReport {
                task: task.id.clone(),
                examples: examples.len(),
                loss,
                accuracy: right as f64 / total.max(1) as f64,
                spans: Some(span_f1(&gold, &pred)),
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamRow {
    pub store: String,
    pub name: String,
    pub shape: (usize, usize),
    pub count: usize,
    pub frozen: bool,
}

/// Closed-form count of one recurrent cell next to its enumerated size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellCount {
    pub store: String,
    pub prefix: String,
    pub kind: CellKind,
    pub enumerated: usize,
    pub formula: usize,
    pub with_bias: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamReport {
    pub rows: Vec<ParamRow>,
    pub store_totals: Vec<(String, usize)>,
    pub total: usize,
    pub cells: Vec<CellCount>,
}

fn cell_counts(store: &ParamStore, d: usize, out: &mut Vec<CellCount>) -> Result<()> {
    let mut prefixes: Vec<String> = Vec::new();
    for name in store.names() {
        if let Some((prefix, _)) = name.rsplit_once('.') {
            if prefix.contains('.') && !prefixes.iter().any(|p| p == prefix) {
                prefixes.push(prefix.to_string());
            }
        }
    }
    for prefix in prefixes {
        let enumerated: usize = store
            .iter()
            .filter(|(n, _)| n.rsplit_once('.').is_some_and(|(p, _)| p == prefix))
            .map(|(_, e)| e.value.len())
            .sum();
        let (kind, d, h, m, z) = if prefix.starts_with("meta.") {
            // The meta input is [x; own state; basic state].
            let p = MetaLstmParams::read_from(store, &prefix)?;
            let h = p.w_m.cols() - p.hidden() - d;
            (CellKind::Meta, d, h, p.hidden(), p.meta_dim())
        } else if prefix.starts_with("basic.") {
            let p = BasicLstmParams::read_from(store, &prefix)?;
            (CellKind::Basic, p.input(), p.hidden(), 0, p.meta_dim())
        } else {
            let w = store.value(&format!("{prefix}.W"))?;
            let h = w.rows() / 4;
            (CellKind::Standard, w.cols() - h, h, 0, 0)
        };
        let c = count_params(kind, d, h, m, z);
        out.push(CellCount {
            store: store.label().to_string(),
            prefix,
            kind,
            enumerated,
            formula: c.formula,
            with_bias: c.with_bias,
        });
    }
    Ok(())
}

pub fn param_report(model: &MultiTaskModel) -> Result<ParamReport> {
    let mut rows = Vec::new();
    let mut store_totals = Vec::new();
    let mut cells = Vec::new();
    for store in std::iter::once(&model.shared).chain(&model.private) {
        for (name, e) in store.iter() {
            rows.push(ParamRow {
                store: store.label().to_string(),
                name: name.to_string(),
                shape: e.value.shape(),
                count: e.value.len(),
                frozen: e.frozen,
            });
        }
        store_totals.push((store.label().to_string(), store.count()));
        cell_counts(store, model.cfg.d, &mut cells)?;
    }
    let total = store_totals.iter().map(|(_, c)| c).sum();
    Ok(ParamReport {
        rows,
        store_totals,
        total,
        cells,
    })
}

impl ParamReport {
    /// Tab-separated tables: tensors, per-store totals, then cells.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("store\ttensor\trows\tcols\tcount\tfrozen\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.store, r.name, r.shape.0, r.shape.1, r.count, r.frozen
            );
        }
        s.push_str("\nstore\ttotal\n");
        for (store, n) in &self.store_totals {
            let _ = writeln!(s, "{store}\t{n}");
        }
        let _ = writeln!(s, "all\t{}", self.total);
        s.push_str("\nstore\tcell\tkind\tenumerated\tformula\twith_bias\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{}\t{}\t{:?}\t{}\t{}\t{}",
                c.store, c.prefix, c.kind, c.enumerated, c.formula, c.with_bias
            );
        }
        s
    }
}

/// Finite-difference check of every trainable tensor task `k` reads, on a
/// copy of the model.
pub fn model_grad_check(
    model: &MultiTaskModel,
    k: usize,
    batch: &[Example],
    eps: f64,
    sample: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if k >= model.tasks.len() {
        return Err(Error::UnknownTask(format!("#{k}")));
    }
    let refs: Vec<&Example> = batch.iter().collect();
    let mut shared = model.shared.clone();
    let mut private = model.private[k].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grad_check(&mut [&mut shared, &mut private], eps, sample, &mut rng, |tape, stores| {
        let bound = model.bind_with(tape, k, stores[0], stores[1])?;
        model.bound_batch_loss(tape, &bound, &refs)
    })
}

/// Writes `text` to `path`.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests;
