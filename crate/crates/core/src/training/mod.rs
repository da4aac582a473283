//! Adagrad, the task-sampling joint loop, fine-tuning and frozen-meta transfer.

pub mod checkpoint;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{evaluate, MetricReport};
use crate::error::{Error, Result};
use crate::multitask::{Architecture, ModelConfig, MultiTaskModel, TaskInfo};
use crate::numeric::{Matrix, ParamStore, Tape};
use crate::task::{Example, TaskSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Weight of the `||p||^2` penalty, applied inside the update.
    pub l2_reg: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub adagrad_eps: f64,
    /// Global gradient-norm cap over the stores of one step.
    pub clip_norm: Option<f64>,
    /// Restore the epoch with the best dev score when training ends.
    pub keep_best: bool,
    pub finetune_lr_scale: f64,
    pub finetune_epochs: usize,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            l2_reg: 1e-5,
            batch_size: 16,
            max_epochs: 30,
            seed: 1,
            adagrad_eps: 1e-8,
            clip_norm: Some(5.0),
            keep_best: true,
            finetune_lr_scale: 0.1,
            finetune_epochs: 0,
            patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.l2_reg >= 0.0) || !(self.adagrad_eps > 0.0) {
            return Err(Error::Config("l2_reg must be >= 0 and adagrad_eps > 0".into()));
        }
        if !(self.finetune_lr_scale > 0.0) {
            return Err(Error::Config("finetune_lr_scale must be positive".into()));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// One Adagrad update of every non-frozen tensor, then all gradients are
/// cleared. The update direction is `g + 2 * l2 * p`.
pub fn adagrad_step(store: &mut ParamStore, lr: f64, l2: f64, eps: f64) {
    for (_, e) in store.iter_mut() {
        if !e.frozen {
            let values = e.value.as_mut_slice();
            let grads = e.grad.as_slice();
            let accum = e.accum.as_mut_slice();
            for i in 0..values.len() {
                let g = grads[i] + 2.0 * l2 * values[i];
                accum[i] += g * g;
                values[i] -= lr * g / (accum[i].sqrt() + eps);
            }
        }
        e.grad.fill(0.0);
    }
}

/// Scales gradients so their joint norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_gradients(stores: &mut [&mut ParamStore], max_norm: f64) -> f64 {
    let norm = stores.iter().map(|s| s.grad_sum_squares()).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for s in stores.iter_mut() {
            for (_, e) in s.iter_mut() {
                if !e.frozen {
                    e.grad.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
                }
            }
        }
    }
    norm
}

/// Uniform seeded choice of the next task.
#[derive(Clone, Debug)]
pub struct TaskSampler {
    rng: ChaCha8Rng,
    n_tasks: usize,
}

impl TaskSampler {
    pub fn new(n_tasks: usize, seed: u64) -> Self {
        assert!(n_tasks > 0, "sampler needs a task");
        TaskSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            n_tasks,
        }
    }
}

impl Iterator for TaskSampler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        Some(self.rng.gen_range(0..self.n_tasks))
    }
}

/// Endless shuffled passes over a split.
#[derive(Clone, Debug)]
struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchCursor {
    fn new(n: usize, seed: u64) -> Self {
        BatchCursor {
            order: (0..n).collect(),
            pos: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

/// `lambda_k` times the mean loss of `batch`, without the penalty term.
pub fn task_loss(model: &MultiTaskModel, k: usize, batch: &[&Example]) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = model.batch_loss(&mut tape, k, batch)?;
    Ok(tape.scalar(loss))
}

/// Forward, backward, clip and update for task `k`. Only the shared store
/// and task `k`'s private store are touched. Returns the batch loss.
pub fn train_step(model: &mut MultiTaskModel, k: usize, batch: &[&Example], cfg: &TrainConfig, lr: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = model.batch_loss(&mut tape, k, batch)?;
    let value = tape.scalar(loss);
    let MultiTaskModel { shared, private, .. } = model;
    let private = &mut private[k];
    tape.backward(loss, &mut [&mut *shared, &mut *private])?;
    if let Some(max) = cfg.clip_norm {
        clip_gradients(&mut [&mut *shared, &mut *private], max);
    }
    adagrad_step(shared, lr, cfg.l2_reg, cfg.adagrad_eps);
    adagrad_step(private, lr, cfg.l2_reg, cfg.adagrad_eps);
    Ok(value)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task: String,
    /// Mean batch loss; `None` when the task was never sampled.
    pub train_loss: Option<f64>,
    pub dev_loss: Option<f64>,
    pub dev_metric: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub seed: u64,
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters the model holds at the end (0 = untouched).
    pub best_epoch: usize,
    pub steps: usize,
    /// Task index drawn at each step.
    pub task_sequence: Vec<usize>,
}

impl TrainLog {
    /// `epoch task train_loss dev_loss dev_metric`, tab separated.
    pub fn to_tsv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        let mut s = String::from("epoch\ttask\ttrain_loss\tdev_loss\tdev_metric\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                r.epoch,
                r.task,
                fmt(r.train_loss),
                fmt(r.dev_loss),
                fmt(r.dev_metric)
            );
        }
        s
    }

    pub fn for_task<'a>(&'a self, task: &'a str) -> impl Iterator<Item = &'a EpochRecord> + 'a {
        self.records.iter().filter(move |r| r.task == task)
    }
}

fn check_tasks(model: &MultiTaskModel, tasks: &[TaskSpec]) -> Result<()> {
    if tasks.len() != model.tasks.len() {
        return Err(Error::Structural(format!(
            "{} task corpora for a model with {} tasks",
            tasks.len(),
            model.tasks.len()
        )));
    }
    for (t, info) in tasks.iter().zip(&model.tasks) {
        if t.id != info.id || t.head != info.head {
            return Err(Error::Structural(format!("task `{}` does not match the model's `{}`", t.id, info.id)));
        }
        if t.corpus.train.is_empty() {
            return Err(Error::EmptyInput("training split"));
        }
        t.validate(model.vocab_size)?;
    }
    Ok(())
}

fn dev_reports(model: &MultiTaskModel, tasks: &[TaskSpec], only: Option<usize>) -> Result<Vec<Option<MetricReport>>> {
    tasks
        .iter()
        .enumerate()
        .map(|(k, t)| {
            if t.corpus.dev.is_empty() || only.is_some_and(|o| o != k) {
                Ok(None)
            } else {
                evaluate(model, k, &t.corpus.dev).map(Some)
            }
        })
        .collect()
}

/// Mean dev metric and mean dev loss over the tasks that have a dev split.
fn dev_score(reports: &[Option<MetricReport>]) -> Option<(f64, f64)> {
    let present: Vec<&MetricReport> = reports.iter().flatten().collect();
    if present.is_empty() {
        return None;
    }
    let n = present.len() as f64;
    Some((
        present.iter().map(|r| r.primary()).sum::<f64>() / n,
        present.iter().map(|r| r.loss).sum::<f64>() / n,
    ))
}

#[derive(Clone)]
struct Snapshot {
    shared: ParamStore,
    private: Vec<ParamStore>,
}

impl Snapshot {
    fn take(model: &MultiTaskModel) -> Self {
        Snapshot {
            shared: model.shared.clone(),
            private: model.private.clone(),
        }
    }

    fn restore(self, model: &mut MultiTaskModel) {
        model.shared = self.shared;
        model.private = self.private;
    }
}

/// Joint training: each step draws a task uniformly, takes that task's next
/// mini-batch and updates the shared store plus that task's private store.
/// An epoch is `sum_k ceil(N_k / batch)` steps. With `keep_best`, the model
/// ends at the epoch with the highest mean dev metric (ties: lower dev loss).
pub fn joint_train(model: &mut MultiTaskModel, tasks: &[TaskSpec], cfg: &TrainConfig) -> Result<TrainLog> {
    joint_train_inner(model, tasks, cfg, false).map(|(log, _)| log)
}

/// [`joint_train`] that also returns the last-epoch model when the best
/// epoch was restored over it.
pub fn joint_train_with_final(
    model: &mut MultiTaskModel,
    tasks: &[TaskSpec],
    cfg: &TrainConfig,
) -> Result<(TrainLog, Option<MultiTaskModel>)> {
    joint_train_inner(model, tasks, cfg, true)
}

fn joint_train_inner(
    model: &mut MultiTaskModel,
    tasks: &[TaskSpec],
    cfg: &TrainConfig,
    want_final: bool,
) -> Result<(TrainLog, Option<MultiTaskModel>)> {
    cfg.validate()?;
    check_tasks(model, tasks)?;
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampler = TaskSampler::new(tasks.len(), seeds.gen());
    let mut cursors: Vec<BatchCursor> = tasks
        .iter()
        .map(|t| BatchCursor::new(t.corpus.train.len(), seeds.gen()))
        .collect();
    let steps_per_epoch: usize = tasks
        .iter()
        .map(|t| t.corpus.train.len().div_ceil(cfg.batch_size))
        .sum();

    let mut log = TrainLog {
        seed: cfg.seed,
        ..TrainLog::default()
    };
    let mut best: Option<((f64, f64), usize, Snapshot)> = None;
    for epoch in 1..=cfg.max_epochs {
        let mut sums = vec![0.0; tasks.len()];
        let mut counts = vec![0usize; tasks.len()];
        for _ in 0..steps_per_epoch {
            let k = sampler.next().expect("endless sampler");
            let idx = cursors[k].next_batch(cfg.batch_size);
            let batch: Vec<&Example> = idx.iter().map(|&i| &tasks[k].corpus.train[i]).collect();
            sums[k] += train_step(model, k, &batch, cfg, cfg.learning_rate)?;
            counts[k] += 1;
            log.steps += 1;
            log.task_sequence.push(k);
        }
        let reports = dev_reports(model, tasks, None)?;
        for (k, t) in tasks.iter().enumerate() {
            log.records.push(EpochRecord {
                epoch,
                task: t.id.clone(),
                train_loss: (counts[k] > 0).then(|| sums[k] / counts[k] as f64),
                dev_loss: reports[k].as_ref().map(|r| r.loss),
                dev_metric: reports[k].as_ref().map(MetricReport::primary),
            });
        }
        if cfg.keep_best {
            if let Some(score) = dev_score(&reports) {
                let better = match &best {
                    None => true,
                    Some(((m, l), _, _)) => score.0 > *m || (score.0 == *m && score.1 < *l),
                };
                if better {
                    best = Some((score, epoch, Snapshot::take(model)));
                }
            }
        }
    }
    log.best_epoch = cfg.max_epochs;
    let mut last = None;
    if let Some((_, epoch, snap)) = best {
        if epoch != cfg.max_epochs {
            if want_final {
                last = Some(model.clone());
            }
            snap.restore(model);
        }
        log.best_epoch = epoch;
    }
    Ok((log, last))
}

/// Continues training on one task at `finetune_lr_scale` times the learning
/// rate for up to `finetune_epochs` epochs. An epoch becomes the new best
/// only if neither its dev loss nor its dev metric is worse than the best so
/// far; training stops after `patience` epochs without a new best and the
/// best parameters are restored.
pub fn fine_tune(model: &mut MultiTaskModel, tasks: &[TaskSpec], task_id: &str, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    let k = model.task_index(task_id)?;
    check_tasks(model, tasks)?;
    let task = &tasks[k];
    let mut log = TrainLog {
        seed: cfg.seed,
        ..TrainLog::default()
    };
    if cfg.finetune_epochs == 0 {
        return Ok(log);
    }
    if task.corpus.dev.is_empty() {
        return Err(Error::EmptyInput("dev split for fine-tuning"));
    }
    let lr = cfg.learning_rate * cfg.finetune_lr_scale;
    let mut cursor = BatchCursor::new(task.corpus.train.len(), cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let steps = task.corpus.train.len().div_ceil(cfg.batch_size);
    let start = evaluate(model, k, &task.corpus.dev)?;
    let mut best = (start.loss, start.primary(), 0usize, Snapshot::take(model));
    let mut stale = 0;
    for epoch in 1..=cfg.finetune_epochs {
        let mut sum = 0.0;
        for _ in 0..steps {
            let idx = cursor.next_batch(cfg.batch_size);
            let batch: Vec<&Example> = idx.iter().map(|&i| &task.corpus.train[i]).collect();
            sum += train_step(model, k, &batch, cfg, lr)?;
            log.steps += 1;
            log.task_sequence.push(k);
        }
        let dev = evaluate(model, k, &task.corpus.dev)?;
        log.records.push(EpochRecord {
            epoch,
            task: task.id.clone(),
            train_loss: Some(sum / steps as f64),
            dev_loss: Some(dev.loss),
            dev_metric: Some(dev.primary()),
        });
        if dev.loss <= best.0 && dev.primary() >= best.1 {
            best = (dev.loss, dev.primary(), epoch, Snapshot::take(model));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    log.best_epoch = best.2;
    best.3.restore(model);
    Ok(log)
}

/// Options for [`transfer_train`].
#[derive(Clone, Debug, Default)]
pub struct TransferOptions {
    /// Initial embedding table; random when absent.
    pub embeddings: Option<Matrix>,
    pub freeze_embeddings: bool,
}

/// Trains a fresh Basic-LSTM and head for `task` under a fixed Meta-LSTM.
/// `meta` holds the `meta.*` tensors; they are copied in and frozen.
pub fn transfer_train(
    meta: &ParamStore,
    task: &TaskSpec,
    model_cfg: &ModelConfig,
    vocab_size: usize,
    cfg: &TrainConfig,
    opts: &TransferOptions,
) -> Result<(MultiTaskModel, TrainLog)> {
    let mut model = MultiTaskModel::new(
        Architecture::MetaMtl,
        vec![TaskInfo::from(task)],
        model_cfg,
        vocab_size,
        cfg.seed,
    )?;
    install_frozen_meta(&mut model, meta)?;
    if let Some(table) = &opts.embeddings {
        model.set_embeddings(table)?;
    }
    if opts.freeze_embeddings {
        model.freeze_embeddings()?;
    }
    let log = joint_train(&mut model, std::slice::from_ref(task), cfg)?;
    Ok((model, log))
}

/// Copies every `meta.*` tensor of `model` from `meta` and freezes it.
pub fn install_frozen_meta(model: &mut MultiTaskModel, meta: &ParamStore) -> Result<()> {
    for name in model.meta_names() {
        let src = meta.entry(&name).map_err(|_| Error::DimMismatch {
            what: "meta checkpoint".into(),
            expected: format!("tensor `{name}`"),
            found: "nothing".into(),
        })?;
        model.shared.set_value(&name, src.value.clone())?;
        model.shared.set_frozen(&name, true)?;
    }
    Ok(())
}

/// The `meta.*` tensors of a meta-architecture model, as their own store.
pub fn extract_meta(model: &MultiTaskModel, k: usize) -> Result<ParamStore> {
    let src = model
        .meta_store(k)
        .ok_or_else(|| Error::Unsupported(format!("a {} model has no Meta-LSTM", model.arch)))?;
    let mut out = ParamStore::new("meta");
    for (name, e) in src.iter().filter(|(n, _)| n.starts_with("meta.")) {
        out.insert(name, e.value.clone())?;
    }
    Ok(out)
}
