//! Sharing architectures built from cells and heads.
//!
//! Every model keeps one `shared` store and one private store per task, and
//! no tensor name lives in both. Which tensors are shared depends on the
//! architecture:
//!
//! | arch        | shared                          | private (per task)                 |
//! |-------------|---------------------------------|------------------------------------|
//! | single-lstm | -                               | `embed`, `lstm.*`, head            |
//! | single-meta | -                               | `embed`, `meta.*`, `basic.*`, head |
//! | ssp / psp   | `embed`, `shared.*` (LSTM)      | `lstm.*`, head                     |
//! | meta-mtl    | `embed`, `meta.*` (Meta-LSTM)   | `basic.*`, head                    |
//!
//! Tagging tasks read bidirectional encoders (`*.fwd` and `*.bwd`);
//! classification tasks read the forward encoder's last state.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cells::recorded::{self, BasicVars, LstmVars, MetaVars, TapeCell};
use crate::cells::{
    lstm_step, meta_stack_step, BasicLstmParams, CellState, LstmParams, MetaLstmParams,
};
use crate::data::PAD;
use crate::error::{Error, Result};
use crate::heads::{crf_viterbi, ClassifierVars, CrfParams, CrfVars};
use crate::numeric::{softmax, Matrix, ParamStore, Tape, Var, Vector};
use crate::task::{Example, HeadKind, Label, TaskSpec};

pub const EMBED: &str = "embed";
pub const SHARED_LABEL: &str = "shared";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    SingleLstm,
    SingleMeta,
    Ssp,
    Psp,
    MetaMtl,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::SingleLstm,
        Architecture::SingleMeta,
        Architecture::Ssp,
        Architecture::Psp,
        Architecture::MetaMtl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::SingleLstm => "single-lstm",
            Architecture::SingleMeta => "single-meta",
            Architecture::Ssp => "ssp",
            Architecture::Psp => "psp",
            Architecture::MetaMtl => "meta-mtl",
        }
    }

    /// No shared parameters at all.
    pub fn is_single(self) -> bool {
        matches!(self, Architecture::SingleLstm | Architecture::SingleMeta)
    }

    pub fn uses_meta(self) -> bool {
        matches!(self, Architecture::SingleMeta | Architecture::MetaMtl)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown architecture `{s}` (expected one of single-lstm, single-meta, ssp, psp, meta-mtl)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Embedding size.
    pub d: usize,
    /// Task (basic or private LSTM) hidden size.
    pub h: usize,
    /// Meta-LSTM hidden size.
    pub m: usize,
    /// Meta vector size.
    pub z: usize,
    /// Hidden size of the shared LSTM in SSP and PSP.
    pub shared_h: usize,
    /// Give every task its own embedding table even when sharing.
    pub private_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 200,
            h: 100,
            m: 40,
            z: 40,
            shared_h: 100,
            private_embeddings: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d", self.d),
            ("h", self.h),
            ("m", self.m),
            ("z", self.z),
            ("shared_h", self.shared_h),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// What a model needs to know about a task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskInfo {
    pub id: String,
    pub head: HeadKind,
    pub lambda: f64,
}

impl From<&TaskSpec> for TaskInfo {
    fn from(t: &TaskSpec) -> Self {
        TaskInfo {
            id: t.id.clone(),
            head: t.head.clone(),
            lambda: t.lambda,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MultiTaskModel {
    pub arch: Architecture,
    pub cfg: ModelConfig,
    pub vocab_size: usize,
    pub shared: ParamStore,
    /// One store per task, aligned with `tasks`.
    pub private: Vec<ParamStore>,
    pub tasks: Vec<TaskInfo>,
}

pub fn build_model(
    arch: Architecture,
    tasks: &[TaskSpec],
    cfg: &ModelConfig,
    vocab_size: usize,
    seed: u64,
) -> Result<MultiTaskModel> {
    MultiTaskModel::new(arch, tasks.iter().map(TaskInfo::from).collect(), cfg, vocab_size, seed)
}

fn directions(bidirectional: bool) -> &'static [&'static str] {
    if bidirectional {
        &["fwd", "bwd"]
    } else {
        &["fwd"]
    }
}

fn init_embeddings(vocab_size: usize, d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut e = Matrix::uniform(vocab_size, d, 0.1, rng);
    e.row_mut(PAD).fill(0.0);
    e
}

impl MultiTaskModel {
    pub fn new(
        arch: Architecture,
        tasks: Vec<TaskInfo>,
        cfg: &ModelConfig,
        vocab_size: usize,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if tasks.is_empty() {
            return Err(Error::EmptyInput("task list"));
        }
        if vocab_size < 3 {
            return Err(Error::Config("vocabulary has no tokens".into()));
        }
        for (i, t) in tasks.iter().enumerate() {
            if tasks[..i].iter().any(|u| u.id == t.id) {
                return Err(Error::DuplicateTask(t.id.clone()));
            }
            if !(t.lambda > 0.0) || t.head.outputs() == 0 {
                return Err(Error::Config(format!("task `{}` has an invalid head or weight", t.id)));
            }
        }
        let ModelConfig {
            d, h, m, z, shared_h: hs, ..
        } = *cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let any_tagging = tasks.iter().any(|t| t.head.is_tagging());
        let share_embed = !arch.is_single() && !cfg.private_embeddings;

        let mut shared = ParamStore::new(SHARED_LABEL);
        if share_embed {
            shared.insert(EMBED, init_embeddings(vocab_size, d, &mut rng))?;
        }
        for dir in directions(any_tagging) {
            match arch {
                Architecture::Ssp | Architecture::Psp => {
                    LstmParams::init(d, hs, &mut rng).write_to(&mut shared, &format!("shared.{dir}"))?
                }
                Architecture::MetaMtl => MetaLstmParams::init(d, h, m, z, &mut rng)
                    .write_to(&mut shared, &format!("meta.{dir}"))?,
                _ => {}
            }
        }

        let mut private = Vec::with_capacity(tasks.len());
        for task in &tasks {
            let mut p = ParamStore::new(format!("task:{}", task.id));
            if !share_embed {
                p.insert(EMBED, init_embeddings(vocab_size, d, &mut rng))?;
            }
            let tagging = task.head.is_tagging();
            let dirs = directions(tagging);
            let n_dirs = dirs.len();
            if arch == Architecture::SingleMeta {
                for dir in dirs {
                    MetaLstmParams::init(d, h, m, z, &mut rng).write_to(&mut p, &format!("meta.{dir}"))?;
                }
            }
            for dir in dirs {
                match arch {
                    Architecture::SingleLstm | Architecture::Psp => {
                        LstmParams::init(d, h, &mut rng).write_to(&mut p, &format!("lstm.{dir}"))?
                    }
                    Architecture::Ssp => LstmParams::init(d + n_dirs * hs, h, &mut rng)
                        .write_to(&mut p, &format!("lstm.{dir}"))?,
                    Architecture::SingleMeta | Architecture::MetaMtl => {
                        BasicLstmParams::init(d, h, z, &mut rng).write_to(&mut p, &format!("basic.{dir}"))?
                    }
                }
            }
            let rep = match arch {
                Architecture::Psp => n_dirs * (h + hs),
                _ => n_dirs * h,
            };
            match &task.head {
                HeadKind::Classification { n_classes } => {
                    crate::heads::ClassifierParams::init(*n_classes, rep, &mut rng).write_to(&mut p, "head")?
                }
                HeadKind::Tagging { tags } => {
                    CrfParams::init(tags.len(), rep, &mut rng).write_to(&mut p, "crf")?
                }
            }
            private.push(p);
        }

        let model = MultiTaskModel {
            arch,
            cfg: cfg.clone(),
            vocab_size,
            shared,
            private,
            tasks,
        };
        model.check_partition()?;
        Ok(model)
    }

    pub fn task_index(&self, id: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.id == id)
            .ok_or_else(|| Error::UnknownTask(id.to_string()))
    }

    /// No tensor name appears both in the shared store and a private one.
    pub fn check_partition(&self) -> Result<()> {
        for p in &self.private {
            if let Some(name) = p.names().find(|n| self.shared.contains(n)) {
                return Err(Error::Structural(format!(
                    "`{name}` is in both the shared store and `{}`",
                    p.label()
                )));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.shared.count() + self.private.iter().map(ParamStore::count).sum::<usize>()
    }

    /// Store that holds task `k`'s embedding table.
    pub fn embedding_store(&self, k: usize) -> &ParamStore {
        if self.private[k].contains(EMBED) {
            &self.private[k]
        } else {
            &self.shared
        }
    }

    /// Copies `table` into every embedding tensor.
    pub fn set_embeddings(&mut self, table: &Matrix) -> Result<()> {
        for store in std::iter::once(&mut self.shared).chain(self.private.iter_mut()) {
            if store.contains(EMBED) {
                store.set_value(EMBED, table.clone())?;
            }
        }
        Ok(())
    }

    pub fn freeze_embeddings(&mut self) -> Result<()> {
        for store in std::iter::once(&mut self.shared).chain(self.private.iter_mut()) {
            if store.contains(EMBED) {
                store.set_frozen(EMBED, true)?;
            }
        }
        Ok(())
    }

    /// Store holding task `k`'s Meta-LSTM, for meta architectures.
    pub fn meta_store(&self, k: usize) -> Option<&ParamStore> {
        match self.arch {
            Architecture::MetaMtl => Some(&self.shared),
            Architecture::SingleMeta => Some(&self.private[k]),
            _ => None,
        }
    }

    /// Meta-LSTM tensor names of the shared store, in store order.
    pub fn meta_names(&self) -> Vec<String> {
        self.shared
            .names()
            .filter(|n| n.starts_with("meta."))
            .map(str::to_string)
            .collect()
    }

    /// Registers everything task `k` reads on `tape`.
    pub fn bind<'a>(&'a self, tape: &mut Tape, k: usize) -> Result<Bound<'a>> {
        let private = self
            .private
            .get(k)
            .ok_or_else(|| Error::UnknownTask(format!("#{k}")))?;
        self.bind_with(tape, k, &self.shared, private)
    }

    /// As [`bind`](Self::bind), reading tensors from the given stores, which
    /// must have this model's layout.
    pub fn bind_with<'a>(
        &self,
        tape: &mut Tape,
        k: usize,
        shared: &'a ParamStore,
        private: &'a ParamStore,
    ) -> Result<Bound<'a>> {
        let task = self
            .tasks
            .get(k)
            .ok_or_else(|| Error::UnknownTask(format!("#{k}")))?;
        let tagging = task.head.is_tagging();
        let lstm = |tape: &mut Tape, store: &ParamStore, prefix: &str| -> Result<Encoder> {
            let fwd = TapeCell::Lstm(LstmVars::register(tape, store, &format!("{prefix}.fwd"))?);
            let bwd = if tagging {
                Some(TapeCell::Lstm(LstmVars::register(tape, store, &format!("{prefix}.bwd"))?))
            } else {
                None
            };
            Ok(Encoder { fwd, bwd })
        };
        let meta = |tape: &mut Tape, meta_store: &ParamStore| -> Result<Encoder> {
            let cell = |tape: &mut Tape, dir: &str| -> Result<TapeCell> {
                Ok(TapeCell::MetaStack {
                    meta: MetaVars::register(tape, meta_store, &format!("meta.{dir}"))?,
                    basic: BasicVars::register(tape, private, &format!("basic.{dir}"))?,
                })
            };
            let fwd = cell(tape, "fwd")?;
            let bwd = if tagging { Some(cell(tape, "bwd")?) } else { None };
            Ok(Encoder { fwd, bwd })
        };
        let encoder = match self.arch {
            Architecture::SingleLstm => EncoderVars::Plain(lstm(tape, private, "lstm")?),
            Architecture::SingleMeta => EncoderVars::Plain(meta(tape, private)?),
            Architecture::MetaMtl => EncoderVars::Plain(meta(tape, shared)?),
            Architecture::Ssp => EncoderVars::Stacked {
                shared: lstm(tape, shared, "shared")?,
                private: lstm(tape, private, "lstm")?,
            },
            Architecture::Psp => EncoderVars::Parallel {
                shared: lstm(tape, shared, "shared")?,
                private: lstm(tape, private, "lstm")?,
            },
        };
        let head = match task.head {
            HeadKind::Classification { .. } => HeadVars::Classifier(ClassifierVars::register(tape, private, "head")?),
            HeadKind::Tagging { .. } => HeadVars::Crf(CrfVars::register(tape, private, "crf")?),
        };
        Ok(Bound {
            task: k,
            embed: if private.contains(EMBED) { private } else { shared },
            encoder,
            head,
        })
    }

    /// Per-position representations; a classifier reads the last one.
    pub fn representations(&self, tape: &mut Tape, bound: &Bound<'_>, tokens: &[usize]) -> Result<Vec<Var>> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("token sequence"));
        }
        let xs = tokens
            .iter()
            .map(|&t| tape.param_row(bound.embed, EMBED, t))
            .collect::<Result<Vec<_>>>()?;
        match &bound.encoder {
            EncoderVars::Plain(enc) => enc.run(tape, &xs),
            EncoderVars::Stacked { shared, private } => {
                let s = shared.run(tape, &xs)?;
                let stacked = xs
                    .iter()
                    .zip(&s)
                    .map(|(&x, &st)| tape.concat(&[x, st]))
                    .collect::<Result<Vec<_>>>()?;
                private.run(tape, &stacked)
            }
            EncoderVars::Parallel { shared, private } => {
                let p = private.run(tape, &xs)?;
                let s = shared.run(tape, &xs)?;
                p.iter()
                    .zip(&s)
                    .map(|(&pt, &st)| tape.concat(&[pt, st]))
                    .collect()
            }
        }
    }

    /// Unweighted loss of one example.
    pub fn example_loss(&self, tape: &mut Tape, bound: &Bound<'_>, ex: &Example) -> Result<Var> {
        let reps = self.representations(tape, bound, &ex.tokens)?;
        match (&bound.head, &ex.label) {
            (HeadVars::Classifier(c), Label::Class(y)) => c.loss(tape, *reps.last().expect("non-empty"), *y),
            (HeadVars::Crf(c), Label::Tags(tags)) => c.nll(tape, &reps, tags),
            _ => Err(Error::Structural(format!(
                "label kind does not match the head of task `{}`",
                self.tasks[bound.task].id
            ))),
        }
    }

    /// `lambda_k` times the mean example loss over `batch`.
    pub fn batch_loss(&self, tape: &mut Tape, k: usize, batch: &[&Example]) -> Result<Var> {
        let bound = self.bind(tape, k)?;
        self.bound_batch_loss(tape, &bound, batch)
    }

    pub fn bound_batch_loss(&self, tape: &mut Tape, bound: &Bound<'_>, batch: &[&Example]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        let k = bound.task;
        let losses = batch
            .iter()
            .map(|ex| self.example_loss(tape, bound, ex))
            .collect::<Result<Vec<_>>>()?;
        let stacked = tape.concat(&losses)?;
        let total = tape.sum(stacked)?;
        tape.scale(total, self.tasks[k].lambda / batch.len() as f64)
    }

    /// Prediction and unweighted loss for one example.
    pub fn evaluate_example(&self, k: usize, ex: &Example) -> Result<(Prediction, f64)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, k)?;
        let reps = self.representations(&mut tape, &bound, &ex.tokens)?;
        match (&bound.head, &ex.label) {
            (HeadVars::Classifier(c), Label::Class(y)) => {
                let last = *reps.last().expect("non-empty");
                let logits_var = c.logits(&mut tape, last)?;
                let pred = class_prediction(tape.value(logits_var).as_slice());
                let loss = c.loss(&mut tape, last, *y)?;
                Ok((pred, tape.scalar(loss)))
            }
            (HeadVars::Crf(c), Label::Tags(tags)) => {
                let pred = self.decode_tags(&mut tape, c, &reps)?;
                let loss = c.nll(&mut tape, &reps, tags)?;
                Ok((pred, tape.scalar(loss)))
            }
            _ => Err(Error::Structural("label kind does not match the task head".into())),
        }
    }

    pub fn predict(&self, k: usize, tokens: &[usize]) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, k)?;
        let reps = self.representations(&mut tape, &bound, tokens)?;
        match &bound.head {
            HeadVars::Classifier(c) => {
                let logits = c.logits(&mut tape, *reps.last().expect("non-empty"))?;
                Ok(class_prediction(tape.value(logits).as_slice()))
            }
            HeadVars::Crf(c) => self.decode_tags(&mut tape, c, &reps),
        }
    }

    fn decode_tags(&self, tape: &mut Tape, c: &CrfVars, reps: &[Var]) -> Result<Prediction> {
        let emissions = c.emissions(tape, reps)?;
        let emissions: Vec<Vector> = emissions
            .iter()
            .map(|&e| Vector::from_matrix(tape.value(e)))
            .collect();
        let params = CrfParams {
            emit: tape.value(c.emit).clone(),
            trans: tape.value(c.trans).clone(),
            start: Vector::from_matrix(tape.value(c.start)),
            stop: Vector::from_matrix(tape.value(c.stop)),
        };
        let (path, _) = crf_viterbi(&emissions, &params)?;
        Ok(Prediction::Tags(path))
    }
}

fn class_prediction(logits: &[f64]) -> Prediction {
    let probs = softmax(logits);
    let mut label = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[label] {
            label = i;
        }
    }
    Prediction::Class {
        label,
        logits: logits.to_vec(),
        probs,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Class {
        label: usize,
        logits: Vec<f64>,
        probs: Vec<f64>,
    },
    Tags(Vec<usize>),
}

/// Forward cell and, for tagging, a backward one.
#[derive(Clone, Copy, Debug)]
pub struct Encoder {
    pub fwd: TapeCell,
    pub bwd: Option<TapeCell>,
}

impl Encoder {
    fn run(&self, tape: &mut Tape, xs: &[Var]) -> Result<Vec<Var>> {
        match &self.bwd {
            Some(bwd) => recorded::bidirectional_encode(tape, &self.fwd, bwd, xs),
            None => recorded::run_sequence(tape, &self.fwd, xs),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum EncoderVars {
    Plain(Encoder),
    Stacked { shared: Encoder, private: Encoder },
    Parallel { shared: Encoder, private: Encoder },
}

#[derive(Clone, Copy, Debug)]
pub enum HeadVars {
    Classifier(ClassifierVars),
    Crf(CrfVars),
}

/// Task `task`'s tensors registered on one tape.
#[derive(Clone, Copy, Debug)]
pub struct Bound<'a> {
    pub task: usize,
    pub embed: &'a ParamStore,
    pub encoder: EncoderVars,
    pub head: HeadVars,
}

/// Shared layer reads `x_t`; the private layer reads `[x_t; h_shared_t]`.
pub fn ssp_step(
    shared: &LstmParams,
    private: &LstmParams,
    x: &Vector,
    s_shared: &CellState,
    s_k: &CellState,
) -> Result<(CellState, CellState)> {
    let s_next = lstm_step(shared, x, s_shared)?;
    let input = Vector::concat(&[x, &s_next.h]);
    let k_next = lstm_step(private, &input, s_k)?;
    Ok((s_next, k_next))
}

/// Both layers read `x_t`; the representation is `[h_k; h_shared]`.
pub fn psp_step(
    shared: &LstmParams,
    private: &LstmParams,
    x: &Vector,
    s_shared: &CellState,
    s_k: &CellState,
) -> Result<(CellState, CellState, Vector)> {
    let s_next = lstm_step(shared, x, s_shared)?;
    let k_next = lstm_step(private, x, s_k)?;
    let rep = Vector::concat(&[&k_next.h, &s_next.h]);
    Ok((s_next, k_next, rep))
}

/// Shared Meta-LSTM driving task `k`'s Basic-LSTM. The meta cell reads the
/// task's own basic state, so its activations are per task.
pub fn meta_mtl_step(
    shared_meta: &MetaLstmParams,
    private_k: &BasicLstmParams,
    x: &Vector,
    ms: &CellState,
    bs_k: &CellState,
) -> Result<(CellState, CellState, Vector)> {
    meta_stack_step(shared_meta, private_k, x, ms, bs_k)
}
