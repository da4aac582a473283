//! Run configuration: `key = value` lines, `#` comments, and `[task:NAME]`
//! sections. Relative paths resolve against the config file's directory.
//!
//! ```text
//! arch = meta-mtl
//! seed = 3
//! d = 64
//!
//! [task:books]
//! kind = classification
//! data = books.tsv
//!
//! [task:chunk]
//! kind = tagging
//! train = chunk/train.txt
//! dev = chunk/dev.txt
//! test = chunk/test.txt
//! ```
//!
//! A config with `synth_tasks = K` and no task sections runs on the
//! synthetic suite instead of files.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{
    self, encode_classification, encode_tagging, load_conll, synth_suite, tagset, SynthConfig, TaggedSentence,
    TextRecord, Vocab,
};
use crate::error::{Error, Result};
use crate::multitask::{Architecture, ModelConfig};
use crate::task::{Corpus, HeadKind, TaskSpec};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaskSource {
    /// One `label<TAB>text` file cut 70/10/20 by seed.
    Classification { data: PathBuf },
    /// Three `label<TAB>text` files.
    ClassificationSplits { train: PathBuf, dev: PathBuf, test: PathBuf },
    Tagging { train: PathBuf, dev: PathBuf, test: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskDecl {
    pub name: String,
    pub source: TaskSource,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub arch: Architecture,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tasks: Vec<TaskDecl>,
    pub embeddings: Option<PathBuf>,
    pub freeze_embeddings: bool,
    pub min_count: usize,
    pub synth: Option<SynthConfig>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            arch: Architecture::MetaMtl,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            tasks: Vec::new(),
            embeddings: None,
            freeze_embeddings: false,
            min_count: 1,
            synth: None,
            out: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

#[derive(Default)]
struct PendingTask {
    name: String,
    kind: Option<String>,
    data: Option<PathBuf>,
    train: Option<PathBuf>,
    dev: Option<PathBuf>,
    test: Option<PathBuf>,
    lambda: f64,
}

impl PendingTask {
    fn finish(self) -> Result<TaskDecl> {
        let name = self.name;
        let missing = |what: &str| Error::Config(format!("[task:{name}] needs `{what}`"));
        let source = match self.kind.as_deref() {
            Some("classification") => match (self.data, self.train, self.dev, self.test) {
                (Some(data), None, None, None) => TaskSource::Classification { data },
                (None, Some(train), Some(dev), Some(test)) => TaskSource::ClassificationSplits { train, dev, test },
                _ => {
                    return Err(Error::Config(format!(
                        "[task:{name}] needs either `data` or all of `train`, `dev`, `test`"
                    )))
                }
            },
            Some("tagging") => TaskSource::Tagging {
                train: self.train.ok_or_else(|| missing("train"))?,
                dev: self.dev.ok_or_else(|| missing("dev"))?,
                test: self.test.ok_or_else(|| missing("test"))?,
            },
            Some(other) => return Err(Error::Config(format!("[task:{name}] unknown kind `{other}`"))),
            None => return Err(missing("kind")),
        };
        Ok(TaskDecl {
            name,
            source,
            lambda: self.lambda,
        })
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut current: Option<PendingTask> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: Error| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", i + 1)),
                other => other,
            };
            if let Some(header) = line.strip_prefix('[') {
                let name = header
                    .strip_suffix(']')
                    .and_then(|h| h.strip_prefix("task:"))
                    .map(str::trim)
                    .filter(|n| !n.is_empty())
                    .ok_or_else(|| at(Error::Config(format!("bad section `{line}`"))))?;
                if let Some(t) = current.take() {
                    cfg.tasks.push(t.finish()?);
                }
                current = Some(PendingTask {
                    name: name.to_string(),
                    lambda: 1.0,
                    ..PendingTask::default()
                });
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| at(Error::Config(format!("expected `key = value`, got `{line}`"))))?;
            match current.as_mut() {
                Some(t) => {
                    let path = || base.join(value);
                    match key {
                        "kind" => t.kind = Some(value.to_string()),
                        "data" => t.data = Some(path()),
                        "train" => t.train = Some(path()),
                        "dev" => t.dev = Some(path()),
                        "test" => t.test = Some(path()),
                        "lambda" => t.lambda = parse_num(key, value).map_err(at)?,
                        _ => return Err(at(Error::Config(format!("unknown task key `{key}`")))),
                    }
                }
                None => cfg.set(key, value, base).map_err(at)?,
            }
        }
        if let Some(t) = current.take() {
            cfg.tasks.push(t.finish()?);
        }
        Ok(cfg)
    }

    /// Sets one top-level key. Command-line overrides go through here too.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "arch" => self.arch = value.parse()?,
            "d" => m.d = parse_num(key, value)?,
            "h" => m.h = parse_num(key, value)?,
            "m" => m.m = parse_num(key, value)?,
            "z" => m.z = parse_num(key, value)?,
            "shared_h" => m.shared_h = parse_num(key, value)?,
            "private_embeddings" => m.private_embeddings = parse_bool(key, value)?,
            "learning_rate" => t.learning_rate = parse_num(key, value)?,
            "l2_reg" => t.l2_reg = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "max_epochs" => t.max_epochs = parse_num(key, value)?,
            "seed" => {
                t.seed = parse_num(key, value)?;
                if let Some(s) = self.synth.as_mut() {
                    s.seed = t.seed;
                }
            }
            "adagrad_eps" => t.adagrad_eps = parse_num(key, value)?,
            "clip_norm" => {
                t.clip_norm = match value {
                    "none" | "off" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "keep_best" => t.keep_best = parse_bool(key, value)?,
            "finetune_lr_scale" => t.finetune_lr_scale = parse_num(key, value)?,
            "finetune_epochs" => t.finetune_epochs = parse_num(key, value)?,
            "patience" => t.patience = parse_num(key, value)?,
            "embeddings" => self.embeddings = Some(base.join(value)),
            "freeze_embeddings" => self.freeze_embeddings = parse_bool(key, value)?,
            "min_count" => self.min_count = parse_num(key, value)?,
            "out" => self.out = base.join(value),
            "synth_tasks" => {
                let n = parse_num(key, value)?;
                let seed = self.train.seed;
                self.synth_mut(seed).n_tasks = n;
            }
            "synth_train" | "synth_dev" | "synth_test" => {
                let n = parse_num(key, value)?;
                let seed = self.train.seed;
                let s = self.synth_mut(seed);
                match key {
                    "synth_train" => s.n_train = n,
                    "synth_dev" => s.n_dev = n,
                    _ => s.n_test = n,
                }
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn synth_mut(&mut self, seed: u64) -> &mut SynthConfig {
        self.synth.get_or_insert_with(|| SynthConfig::new(0, seed))
    }

    /// Applies `key=value` overrides from the command line, relative to the
    /// working directory.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim(), Path::new(""))?;
        }
        Ok(())
    }

    /// Checks dimensions, training settings, task declarations and that every
    /// referenced file exists.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        match (&self.synth, self.tasks.is_empty()) {
            (Some(_), false) => {
                return Err(Error::Config("use either synth_tasks or [task:...] sections, not both".into()))
            }
            (None, true) => return Err(Error::Config("no tasks declared".into())),
            (Some(s), true) if s.n_tasks == 0 => return Err(Error::Config("synth_tasks must be at least 1".into())),
            _ => {}
        }
        let mut seen = HashSet::new();
        for t in &self.tasks {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::DuplicateTask(t.name.clone()));
            }
            if !(t.lambda > 0.0) {
                return Err(Error::Config(format!("[task:{}] lambda must be positive", t.name)));
            }
            let paths: Vec<&PathBuf> = match &t.source {
                TaskSource::Classification { data } => vec![data],
                TaskSource::ClassificationSplits { train, dev, test } | TaskSource::Tagging { train, dev, test } => {
                    vec![train, dev, test]
                }
            };
            for p in paths {
                if !p.is_file() {
                    return Err(Error::Config(format!("[task:{}] file not found: {}", t.name, p.display())));
                }
            }
        }
        if let Some(p) = &self.embeddings {
            if !p.is_file() {
                return Err(Error::Config(format!("embeddings file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    /// Reads every corpus, builds the vocabulary over all training splits and
    /// encodes the tasks.
    pub fn load_tasks(&self) -> Result<(Vocab, Vec<TaskSpec>)> {
        if let Some(s) = &self.synth {
            let suite = synth_suite(s);
            return Ok((suite.vocab, suite.tasks));
        }
        enum Raw {
            Text(data::Splits<TextRecord>),
            Tagged(data::Splits<TaggedSentence>),
        }
        let mut raw = Vec::with_capacity(self.tasks.len());
        for t in &self.tasks {
            raw.push(match &t.source {
                TaskSource::Classification { data } => Raw::Text(data::load_classification(data, self.train.seed)?),
                TaskSource::ClassificationSplits { train, dev, test } => Raw::Text(data::Splits {
                    train: data::read_classification(train)?,
                    dev: data::read_classification(dev)?,
                    test: data::read_classification(test)?,
                }),
                TaskSource::Tagging { train, dev, test } => Raw::Tagged(data::Splits {
                    train: load_conll(train)?,
                    dev: load_conll(dev)?,
                    test: load_conll(test)?,
                }),
            });
        }
        let mut lowered: Vec<Vec<String>> = Vec::new();
        for r in &raw {
            match r {
                Raw::Text(s) => lowered.extend(s.train.iter().map(|x| x.tokens.clone())),
                Raw::Tagged(s) => lowered.extend(
                    s.train
                        .iter()
                        .map(|x| x.tokens.iter().map(|t| data::normalize(t)).collect()),
                ),
            }
        }
        let vocab = Vocab::build(lowered.iter().map(|v| v.as_slice()), self.min_count);
        let mut tasks = Vec::with_capacity(raw.len());
        for (decl, r) in self.tasks.iter().zip(raw) {
            let mut spec = match r {
                Raw::Text(s) => {
                    let n_classes = s
                        .train
                        .iter()
                        .chain(&s.dev)
                        .chain(&s.test)
                        .map(|x| x.label + 1)
                        .max()
                        .unwrap_or(0)
                        .max(2);
                    let corpus = s.map(|v| Ok(encode_classification(&v, &vocab)))?;
                    TaskSpec::new(
                        decl.name.clone(),
                        HeadKind::Classification { n_classes },
                        Corpus {
                            train: corpus.train,
                            dev: corpus.dev,
                            test: corpus.test,
                        },
                    )
                }
                Raw::Tagged(s) => {
                    let all: Vec<TaggedSentence> = s.train.iter().chain(&s.dev).chain(&s.test).cloned().collect();
                    let tags = tagset(&all);
                    let corpus = s.map(|v| encode_tagging(&v, &vocab, &tags))?;
                    TaskSpec::new(
                        decl.name.clone(),
                        HeadKind::Tagging { tags },
                        Corpus {
                            train: corpus.train,
                            dev: corpus.dev,
                            test: corpus.test,
                        },
                    )
                }
            };
            spec.lambda = decl.lambda;
            spec.validate(vocab.len())?;
            tasks.push(spec);
        }
        Ok((vocab, tasks))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_sections() {
        let text = "arch = psp # baseline\nd = 12\nclip_norm = none\n\n[task:a]\nkind = classification\ndata = a.tsv\nlambda = 0.5\n[task:b]\nkind = tagging\ntrain = b/train\ndev = b/dev\ntest = b/test\n";
        let cfg = RunConfig::parse(text, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.arch, Architecture::Psp);
        assert_eq!(cfg.model.d, 12);
        assert_eq!(cfg.train.clip_norm, None);
        assert_eq!(cfg.tasks.len(), 2);
        assert_eq!(
            cfg.tasks[0].source,
            TaskSource::Classification {
                data: PathBuf::from("/cfg/a.tsv")
            }
        );
        assert_eq!(cfg.tasks[0].lambda, 0.5);
        assert!(matches!(cfg.tasks[1].source, TaskSource::Tagging { .. }));
    }

    #[test]
    fn reports_line_numbers() {
        let err = RunConfig::parse("d = 4\nbogus = 1\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = RunConfig::parse("[task:x]\nkind = tagging\ntrain = t\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("dev"), "{err}");
        assert!(RunConfig::parse("arch = lstm-9000\n", Path::new(".")).is_err());
    }

    #[test]
    fn overrides_win_and_seed_follows_synth() {
        let mut cfg = RunConfig::parse("synth_tasks = 3\nseed = 4\n", Path::new(".")).unwrap();
        cfg.apply_overrides(&["seed=9".into(), "arch=ssp".into()]).unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.synth.as_ref().unwrap().seed, 9);
        assert_eq!(cfg.arch, Architecture::Ssp);
        assert!(cfg.apply_overrides(&["seed".into()]).is_err());
    }

    #[test]
    fn validation_catches_missing_files_before_loading() {
        let cfg = RunConfig::parse("[task:x]\nkind = classification\ndata = /nonexistent/x.tsv\n", Path::new(".")).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("file not found"), "{err}");
        assert!(RunConfig::default().validate().is_err());
        let bad = RunConfig::parse("synth_tasks = 2\nd = 0\n", Path::new(".")).unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn loads_file_tasks_into_one_vocabulary() {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<TextRecord> = (0..20)
            .map(|i| TextRecord {
                tokens: vec![format!("w{}", i % 3), "good".into()],
                label: i % 2,
            })
            .collect();
        data::write_classification(&dir.path().join("a.tsv"), &records).unwrap();
        let sents = vec![TaggedSentence {
            tokens: vec!["Good".into(), "dog".into()],
            tags: vec!["B-NP".into(), "I-NP".into()],
        }];
        for split in ["train", "dev", "test"] {
            data::write_conll(&dir.path().join(split), &sents).unwrap();
        }
        let text = "[task:a]\nkind = classification\ndata = a.tsv\n[task:b]\nkind = tagging\ntrain = train\ndev = dev\ntest = test\n";
        let cfg = RunConfig::parse(text, dir.path()).unwrap();
        let (vocab, tasks) = cfg.load_tasks().unwrap();
        assert!(vocab.contains("good") && vocab.contains("dog") && !vocab.contains("Good"));
        assert_eq!(tasks[0].corpus.train.len(), 14);
        assert_eq!(tasks[0].head, HeadKind::Classification { n_classes: 2 });
        assert_eq!(tasks[1].head.outputs(), 2);
    }
}
