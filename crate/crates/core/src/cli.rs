//! The commands behind the `metalstm` binary. Each returns the paths it
//! wrote; the binary only parses flags and maps errors to exit codes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::{self, load_embeddings, synth_suite, write_embeddings, SynthConfig, TextRecord, Vocab};
use crate::diagnostics::{evaluate, format_trace, model_grad_check, param_report, trace_sequence, write_text};
use crate::error::{Error, Result};
use crate::multitask::{Architecture, ModelConfig, MultiTaskModel, EMBED};
use crate::numeric::{Matrix, GRAD_CHECK_FLOOR};
use crate::task::{Example, HeadKind, Label, Split, TaskSpec};
use crate::training::checkpoint::{tensor_hash, Checkpoint};
use crate::training::{
    extract_meta, fine_tune, joint_train, joint_train_with_final, transfer_train, TrainLog, TransferOptions,
};

/// Grad-check threshold reported by `diagnose`.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

/// Flags shared by the commands.
#[derive(Clone, Debug, Default)]
pub struct CommonArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub arch: Option<Architecture>,
    /// `key=value` overrides applied after the file.
    pub overrides: Vec<String>,
}

impl CommonArgs {
    /// Reads the config file and applies `--set`, `--seed`, `--arch` and
    /// `--out`, in that order.
    pub fn run_config(&self) -> Result<RunConfig> {
        let path = self
            .config
            .as_deref()
            .ok_or_else(|| Error::Usage("--config is required".into()))?;
        let mut cfg = RunConfig::from_file(path)?;
        cfg.apply_overrides(&self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.set("seed", &seed.to_string(), Path::new(""))?;
        }
        if let Some(arch) = self.arch {
            cfg.arch = arch;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn loaded(cfg: &RunConfig) -> Result<(Vocab, Vec<TaskSpec>)> {
    let (vocab, tasks) = cfg.load_tasks()?;
    if tasks.is_empty() {
        return Err(Error::Config("no tasks declared".into()));
    }
    Ok((vocab, tasks))
}

fn embedding_table(cfg: &RunConfig, vocab: &Vocab) -> Result<Option<Matrix>> {
    cfg.embeddings
        .as_deref()
        .map(|p| load_embeddings(p, vocab, cfg.model.d, cfg.train.seed).map(|t| t.matrix))
        .transpose()
}

fn test_report(model: &MultiTaskModel, tasks: &[TaskSpec], split: Split) -> Result<String> {
    let mut out = String::new();
    for (k, t) in tasks.iter().enumerate() {
        let examples = t.corpus.split(split);
        if examples.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&evaluate(model, k, examples)?.to_kv());
    }
    Ok(out)
}

fn run_summary(cfg: &RunConfig, vocab: &Vocab, tasks: &[TaskSpec], log: &TrainLog) -> String {
    let m = &cfg.model;
    let mut s = String::new();
    let _ = writeln!(s, "seed\t{}", cfg.train.seed);
    let _ = writeln!(s, "arch\t{}", cfg.arch);
    let _ = writeln!(s, "dims\td={} h={} m={} z={} shared_h={}", m.d, m.h, m.m, m.z, m.shared_h);
    let _ = writeln!(s, "vocab_size\t{}", vocab.len());
    let _ = writeln!(s, "vocab_hash\t{}", vocab.hash());
    for t in tasks {
        let _ = writeln!(s, "task\t{}\t{}", t.id, t.corpus.train.len());
    }
    let _ = writeln!(s, "steps\t{}", log.steps);
    let _ = writeln!(s, "best_epoch\t{}", log.best_epoch);
    s
}

/// Joint training, optional per-task fine-tuning, then evaluation.
///
/// Writes `vocab.txt`, `run.tsv`, `train_log.tsv`, `best.ckpt`,
/// `final.ckpt`, `embeddings.txt`, `report.tsv`, plus `finetune_log.tsv`
/// when fine-tuning and `meta.ckpt` for meta architectures.
pub fn cmd_train(args: &CommonArgs) -> Result<Vec<PathBuf>> {
    let cfg = args.run_config()?;
    let (vocab, tasks) = loaded(&cfg)?;
    let mut model = crate::multitask::build_model(cfg.arch, &tasks, &cfg.model, vocab.len(), cfg.train.seed)?;
    if let Some(table) = embedding_table(&cfg, &vocab)? {
        model.set_embeddings(&table)?;
    }
    if cfg.freeze_embeddings {
        model.freeze_embeddings()?;
    }
    let (log, last) = joint_train_with_final(&mut model, &tasks, &cfg.train)?;
    let mut tuned = TrainLog {
        seed: cfg.train.seed,
        ..TrainLog::default()
    };
    if cfg.train.finetune_epochs > 0 {
        for t in &tasks {
            let l = fine_tune(&mut model, &tasks, &t.id, &cfg.train)?;
            tuned.records.extend(l.records);
            tuned.steps += l.steps;
        }
    }

    let out = &cfg.out;
    fs::create_dir_all(out)?;
    let hash = vocab.hash();
    let mut written = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<()> {
        let p = out.join(name);
        write_text(&p, text)?;
        written.push(p);
        Ok(())
    };
    put("run.tsv", &run_summary(&cfg, &vocab, &tasks, &log))?;
    put("train_log.tsv", &log.to_tsv())?;
    if cfg.train.finetune_epochs > 0 {
        put("finetune_log.tsv", &tuned.to_tsv())?;
    }
    put("report.tsv", &test_report(&model, &tasks, Split::Test)?)?;
    vocab.save(&out.join("vocab.txt"))?;
    written.push(out.join("vocab.txt"));
    write_embeddings(&out.join("embeddings.txt"), &vocab, model.embedding_store(0).value(EMBED)?)?;
    written.push(out.join("embeddings.txt"));

    Checkpoint::full(&model, &hash)?.save(&out.join("best.ckpt"))?;
    written.push(out.join("best.ckpt"));
    Checkpoint::full(last.as_ref().unwrap_or(&model), &hash)?.save(&out.join("final.ckpt"))?;
    written.push(out.join("final.ckpt"));
    if cfg.arch.uses_meta() {
        Checkpoint::meta_only(&model, 0, &hash)?.save(&out.join("meta.ckpt"))?;
        written.push(out.join("meta.ckpt"));
    }
    Ok(written)
}

/// Loads a full checkpoint whose vocabulary and tasks match the config.
fn checkpoint_model(path: &Path, vocab: &Vocab, tasks: &[TaskSpec]) -> Result<MultiTaskModel> {
    let ck = Checkpoint::load(path)?;
    if ck.header.vocab_hash != vocab.hash() {
        return Err(Error::DimMismatch {
            what: "vocabulary".into(),
            expected: ck.header.vocab_hash.clone(),
            found: vocab.hash(),
        });
    }
    let model = ck.to_model()?;
    let ids: Vec<&str> = model.tasks.iter().map(|t| t.id.as_str()).collect();
    let wanted: Vec<&str> = tasks.iter().map(|t| t.id.as_str()).collect();
    if ids != wanted {
        return Err(Error::DimMismatch {
            what: "task list".into(),
            expected: ids.join(","),
            found: wanted.join(","),
        });
    }
    Ok(model)
}

/// Evaluates a full checkpoint on one split; writes `eval_<split>.tsv`.
pub fn cmd_eval(args: &CommonArgs, checkpoint: &Path, split: Split) -> Result<Vec<PathBuf>> {
    let cfg = args.run_config()?;
    let (vocab, tasks) = loaded(&cfg)?;
    let model = checkpoint_model(checkpoint, &vocab, &tasks)?;
    let name = match split {
        Split::Train => "train",
        Split::Dev => "dev",
        Split::Test => "test",
    };
    fs::create_dir_all(&cfg.out)?;
    let p = cfg.out.join(format!("eval_{name}.tsv"));
    write_text(&p, &test_report(&model, &tasks, split)?)?;
    Ok(vec![p])
}

/// Where the frozen Meta-LSTM comes from.
#[derive(Clone, Debug)]
pub enum MetaSource {
    /// A meta checkpoint, applied to one named task or to every task.
    Checkpoint { path: PathBuf, task: Option<String> },
    /// For each task: train meta-mtl on the others, then transfer onto it.
    LeaveOneOut,
}

fn transfer_report(
    task: &TaskSpec,
    model: &MultiTaskModel,
    log: &TrainLog,
    before: &str,
    after: &str,
) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "meta_hash_before\t{before}");
    let _ = writeln!(s, "meta_hash_after\t{after}");
    let _ = writeln!(s, "meta_unchanged\t{}", before == after);
    let _ = writeln!(s, "steps\t{}", log.steps);
    if !task.corpus.test.is_empty() {
        s.push_str(&evaluate(model, 0, &task.corpus.test)?.to_kv());
    }
    Ok(s)
}

fn transfer_one(
    cfg: &RunConfig,
    vocab: &Vocab,
    task: &TaskSpec,
    meta: &crate::numeric::ParamStore,
    embeddings: Option<Matrix>,
    written: &mut Vec<PathBuf>,
) -> Result<bool> {
    let opts = TransferOptions {
        embeddings,
        freeze_embeddings: cfg.freeze_embeddings,
    };
    let (model, log) = transfer_train(meta, task, &cfg.model, vocab.len(), &cfg.train, &opts)?;
    let names = model.meta_names();
    let before = tensor_hash(meta, &names)?;
    let after = tensor_hash(&model.shared, &names)?;
    let report = transfer_report(task, &model, &log, &before, &after)?;
    let p = cfg.out.join(format!("transfer_{}.tsv", task.id));
    write_text(&p, &report)?;
    written.push(p);
    let p = cfg.out.join(format!("transfer_{}_log.tsv", task.id));
    write_text(&p, &log.to_tsv())?;
    written.push(p);
    Ok(before == after)
}

/// Frozen-meta transfer. Each target task gets `transfer_<task>.tsv` with
/// the meta hash before and after training and its test metrics.
pub fn cmd_transfer(args: &CommonArgs, source: &MetaSource) -> Result<Vec<PathBuf>> {
    let cfg = args.run_config()?;
    let (vocab, tasks) = loaded(&cfg)?;
    fs::create_dir_all(&cfg.out)?;
    let mut written = Vec::new();
    let mut intact = true;
    match source {
        MetaSource::Checkpoint { path, task } => {
            let ck = Checkpoint::load(path)?;
            ck.check_dims(&cfg.model)?;
            let meta = ck.meta_store()?;
            let embeddings = embedding_table(&cfg, &vocab)?;
            let targets: Vec<&TaskSpec> = match task {
                Some(id) => vec![tasks
                    .iter()
                    .find(|t| &t.id == id)
                    .ok_or_else(|| Error::UnknownTask(id.clone()))?],
                None => tasks.iter().collect(),
            };
            for t in targets {
                intact &= transfer_one(&cfg, &vocab, t, &meta, embeddings.clone(), &mut written)?;
            }
        }
        MetaSource::LeaveOneOut => {
            if tasks.len() < 2 {
                return Err(Error::Config("leave-one-out needs at least two tasks".into()));
            }
            let given = embedding_table(&cfg, &vocab)?;
            for (k, target) in tasks.iter().enumerate() {
                let others: Vec<TaskSpec> = tasks
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != k)
                    .map(|(_, t)| t.clone())
                    .collect();
                let mut source =
                    crate::multitask::build_model(Architecture::MetaMtl, &others, &cfg.model, vocab.len(), cfg.train.seed)?;
                if let Some(table) = &given {
                    source.set_embeddings(table)?;
                }
                joint_train(&mut source, &others, &cfg.train)?;
                let p = cfg.out.join(format!("meta_without_{}.ckpt", target.id));
                Checkpoint::meta_only(&source, 0, &vocab.hash())?.save(&p)?;
                written.push(p);
                let meta = extract_meta(&source, 0)?;
                let table = source.embedding_store(0).value(EMBED)?.clone();
                intact &= transfer_one(&cfg, &vocab, target, &meta, Some(table), &mut written)?;
            }
        }
    }
    if !intact {
        return Err(Error::Structural("meta tensors changed during transfer".into()));
    }
    Ok(written)
}

/// The tiny dimensions `diagnose` grad-checks at.
pub fn grad_check_dims(shared_embeddings: bool) -> ModelConfig {
    ModelConfig {
        d: 6,
        h: 6,
        m: 3,
        z: 3,
        shared_h: 6,
        private_embeddings: !shared_embeddings,
    }
}

fn grad_check_batch(task: &TaskSpec, vocab_size: usize) -> Vec<Example> {
    let mut batch: Vec<Example> = task
        .corpus
        .train
        .iter()
        .take(2)
        .map(|e| {
            let n = e.tokens.len().min(6);
            Example {
                tokens: e.tokens[..n].to_vec(),
                label: match &e.label {
                    Label::Tags(t) => Label::Tags(t[..n].to_vec()),
                    l => l.clone(),
                },
            }
        })
        .collect();
    if batch.is_empty() {
        let tokens: Vec<usize> = (0..4).map(|i| 2 + i % vocab_size.saturating_sub(2).max(1)).collect();
        let label = match &task.head {
            HeadKind::Classification { .. } => Label::Class(0),
            HeadKind::Tagging { .. } => Label::Tags(vec![0; tokens.len()]),
        };
        batch.push(Example { tokens, label });
    }
    batch
}

/// Parameter report, a grad check on a fresh tiny copy of the architecture,
/// and (with `input`) a weight-change trace per input line.
///
/// Writes `params.tsv`, `gradcheck.tsv` and `trace.tsv`. Fails with a usage
/// error when `input` has no tokens, before writing anything.
pub fn cmd_diagnose(
    args: &CommonArgs,
    checkpoint: Option<&Path>,
    input: Option<&Path>,
    task: Option<&str>,
) -> Result<Vec<PathBuf>> {
    let cfg = args.run_config()?;
    let lines: Option<Vec<Vec<String>>> = input
        .map(|p| -> Result<_> {
            let text = fs::read_to_string(p)?;
            let lines: Vec<Vec<String>> = text
                .lines()
                .map(|l| l.split_whitespace().map(data::normalize).collect::<Vec<_>>())
                .filter(|l| !l.is_empty())
                .collect();
            if lines.is_empty() {
                return Err(Error::Usage(format!("input file {} has no tokens", p.display())));
            }
            Ok(lines)
        })
        .transpose()?;
    let (vocab, tasks) = loaded(&cfg)?;
    let model = match checkpoint {
        Some(p) => checkpoint_model(p, &vocab, &tasks)?,
        None => crate::multitask::build_model(cfg.arch, &tasks, &cfg.model, vocab.len(), cfg.train.seed)?,
    };
    fs::create_dir_all(&cfg.out)?;
    let mut written = Vec::new();

    let p = cfg.out.join("params.tsv");
    write_text(&p, &param_report(&model)?.to_tsv())?;
    written.push(p);

    let tiny = crate::multitask::build_model(
        model.arch,
        &tasks,
        &grad_check_dims(!model.cfg.private_embeddings),
        vocab.len(),
        cfg.train.seed,
    )?;
    let mut gc = String::from("task\tmax_rel_error\tcoordinates\tworst\tstatus\n");
    let mut all_pass = true;
    for (k, t) in tasks.iter().enumerate() {
        let r = model_grad_check(&tiny, k, &grad_check_batch(t, vocab.len()), 1e-5, 8, cfg.train.seed)?;
        let pass = r.max_rel_error < GRAD_CHECK_TOLERANCE;
        all_pass &= pass;
        let worst = r.worst.as_ref().map_or("NA".to_string(), |w| format!("{}:{}[{}]", w.0, w.1, w.2));
        let _ = writeln!(
            gc,
            "{}\t{:.3e}\t{}\t{}\t{}",
            t.id,
            r.max_rel_error,
            r.coordinates,
            worst,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    let _ = writeln!(gc, "# error floor {GRAD_CHECK_FLOOR:e}, tolerance {GRAD_CHECK_TOLERANCE:e}");
    let p = cfg.out.join("gradcheck.tsv");
    write_text(&p, &gc)?;
    written.push(p);

    if let Some(lines) = lines {
        let k = match task {
            Some(id) => model.task_index(id)?,
            None => model
                .tasks
                .iter()
                .position(|t| !t.head.is_tagging())
                .ok_or_else(|| Error::Unsupported("tracing needs a classification task".into()))?,
        };
        let mut out = String::new();
        for (i, tokens) in lines.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format_trace(&trace_sequence(&model, k, &vocab.encode(tokens), &vocab)?));
        }
        let p = cfg.out.join("trace.tsv");
        write_text(&p, &out)?;
        written.push(p);
    }
    if !all_pass {
        return Err(Error::Structural("gradient check exceeded tolerance; see gradcheck.tsv".into()));
    }
    Ok(written)
}

/// Writes a synthetic suite as `label<TAB>text` files plus a `synth.cfg`
/// that trains on them.
pub fn cmd_synth(cfg: &SynthConfig, out: &Path) -> Result<Vec<PathBuf>> {
    if cfg.n_tasks == 0 {
        return Err(Error::Usage("--tasks must be at least 1".into()));
    }
    let suite = synth_suite(cfg);
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut config = format!(
        "# synthetic suite: {} tasks, seed {}\narch = meta-mtl\nseed = {}\nd = 16\nh = 16\nm = 8\nz = 8\nshared_h = 16\nmax_epochs = 10\n",
        cfg.n_tasks, cfg.seed, cfg.seed
    );
    for t in &suite.tasks {
        let dir = out.join(&t.id);
        fs::create_dir_all(&dir)?;
        let _ = write!(config, "\n[task:{}]\nkind = classification\n", t.id);
        for (split, name) in [(Split::Train, "train"), (Split::Dev, "dev"), (Split::Test, "test")] {
            let records: Vec<TextRecord> = t
                .corpus
                .split(split)
                .iter()
                .map(|e| TextRecord {
                    tokens: suite.vocab.decode(&e.tokens),
                    label: match e.label {
                        Label::Class(c) => c,
                        Label::Tags(_) => unreachable!("synthetic tasks are classification"),
                    },
                })
                .collect();
            let p = dir.join(format!("{name}.tsv"));
            data::write_classification(&p, &records)?;
            written.push(p);
            let _ = writeln!(config, "{name} = {}/{name}.tsv", t.id);
        }
    }
    let p = out.join("synth.cfg");
    write_text(&p, &config)?;
    written.push(p);
    Ok(written)
}

/// Exit code for an error: 2 for usage and configuration problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::Config(_) | Error::UnknownTask(_) | Error::DuplicateTask(_) => 2,
        _ => 1,
    }
}
