//! Seeded synthetic classification tasks that share one trigger grammar.
//!
//! Every task reads sequences over the same 50 tokens. Task `k` owns a
//! positive and a negative trigger token; the label is the polarity of the
//! trigger, flipped when the shared negator token stands right before it.
//! Other tasks' triggers and stray negators appear as filler, so each task
//! has to learn which tokens matter to it while the negation rule is common
//! to all of them.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Vocab;
use crate::task::{Corpus, Example, HeadKind, Label, TaskSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_tasks: usize,
    pub seed: u64,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Chance that a trigger is preceded by the negator.
    pub negation_rate: f64,
    /// Chance of a negator somewhere it has no effect.
    pub distractor_rate: f64,
}

impl SynthConfig {
    pub fn new(n_tasks: usize, seed: u64) -> Self {
        SynthConfig {
            n_tasks,
            seed,
            vocab_size: 50,
            min_len: 8,
            max_len: 15,
            n_train: 600,
            n_dev: 100,
            n_test: 200,
            negation_rate: 0.5,
            distractor_rate: 0.5,
        }
    }
}

/// Vocabulary indices of one task's triggers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskTriggers {
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Debug)]
pub struct SynthSuite {
    pub vocab: Vocab,
    pub negator: usize,
    pub triggers: Vec<TaskTriggers>,
    pub tasks: Vec<TaskSpec>,
}

impl SynthSuite {
    /// Positions holding task `task`'s triggers.
    pub fn trigger_positions(&self, task: usize, tokens: &[usize]) -> Vec<usize> {
        let t = self.triggers[task];
        tokens
            .iter()
            .enumerate()
            .filter(|(_, &w)| w == t.positive || w == t.negative)
            .map(|(i, _)| i)
            .collect()
    }

    /// Label implied by the grammar, or `None` without a trigger.
    pub fn oracle_label(&self, task: usize, tokens: &[usize]) -> Option<usize> {
        let t = self.triggers[task];
        let p = *self.trigger_positions(task, tokens).first()?;
        let mut positive = tokens[p] == t.positive;
        if p > 0 && tokens[p - 1] == self.negator {
            positive = !positive;
        }
        Some(positive as usize)
    }
}

/// `k` tasks with the default sizes.
pub fn synth_tasks(k: usize, seed: u64) -> SynthSuite {
    synth_suite(&SynthConfig::new(k, seed))
}

pub fn synth_suite(cfg: &SynthConfig) -> SynthSuite {
    assert!(cfg.n_tasks >= 1, "at least one task");
    assert!(cfg.vocab_size >= 5 && cfg.min_len >= 2 && cfg.max_len >= cfg.min_len);
    let vocab = Vocab::from_tokens((0..cfg.vocab_size).map(|i| format!("w{i:02}")));
    let word = |i: usize| i + 2;
    let negator = word(0);
    let pairs = (cfg.vocab_size - 1) / 2;
    let triggers: Vec<TaskTriggers> = (0..cfg.n_tasks)
        .map(|k| {
            let slot = k % pairs;
            TaskTriggers {
                positive: word(1 + 2 * slot),
                negative: word(2 + 2 * slot),
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tasks = triggers
        .iter()
        .enumerate()
        .map(|(k, trig)| {
            let fillers: Vec<usize> = (0..cfg.vocab_size)
                .map(word)
                .filter(|&w| w != negator && w != trig.positive && w != trig.negative)
                .collect();
            let mut seen = HashSet::new();
            let mut split = |n: usize| {
                generate_split(cfg, n, *trig, negator, &fillers, &mut seen, &mut rng)
            };
            let train = split(cfg.n_train);
            let dev = split(cfg.n_dev);
            let test = split(cfg.n_test);
            TaskSpec::new(
                format!("synth{k}"),
                HeadKind::Classification { n_classes: 2 },
                Corpus { train, dev, test },
            )
        })
        .collect();
    SynthSuite {
        vocab,
        negator,
        triggers,
        tasks,
    }
}

fn generate_split(
    cfg: &SynthConfig,
    n: usize,
    trig: TaskTriggers,
    negator: usize,
    fillers: &[usize],
    seen: &mut HashSet<Vec<usize>>,
    rng: &mut ChaCha8Rng,
) -> Vec<Example> {
    let quota = [n / 2, n - n / 2];
    let mut have = [0usize; 2];
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (tokens, label) = generate_one(cfg, trig, negator, fillers, rng);
        if have[label] >= quota[label] || !seen.insert(tokens.clone()) {
            continue;
        }
        have[label] += 1;
        out.push(Example {
            tokens,
            label: Label::Class(label),
        });
    }
    out.shuffle(rng);
    out
}

fn generate_one(
    cfg: &SynthConfig,
    trig: TaskTriggers,
    negator: usize,
    fillers: &[usize],
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, usize) {
    let len = rng.gen_range(cfg.min_len..=cfg.max_len);
    let mut tokens: Vec<usize> = (0..len)
        .map(|_| fillers[rng.gen_range(0..fillers.len())])
        .collect();
    let pos = rng.gen_range(1..len);
    let positive = rng.gen_bool(0.5);
    tokens[pos] = if positive { trig.positive } else { trig.negative };
    let negated = rng.gen_bool(cfg.negation_rate);
    if negated {
        tokens[pos - 1] = negator;
    }
    if rng.gen_bool(cfg.distractor_rate) {
        // Anywhere that is neither the trigger nor the slot right before it.
        let q = rng.gen_range(0..len);
        if q != pos && q + 1 != pos {
            tokens[q] = negator;
        }
    }
    (tokens, (positive != negated) as usize)
}
