//! The file-based path end to end: corpora on disk, a run config, training,
//! a checkpoint round trip and evaluation from the restored model.
//!
//!     cargo run --release --example file_pipeline

use std::fs;

use metalstm::config::RunConfig;
use metalstm::data::{synth_suite, write_classification, SynthConfig, TextRecord};
use metalstm::diagnostics::evaluate;
use metalstm::multitask::build_model;
use metalstm::training::checkpoint::Checkpoint;
use metalstm::training::joint_train;
use metalstm::{Label, Split};

fn main() -> metalstm::Result<()> {
    let dir = std::env::temp_dir().join(format!("metalstm-files-{}", std::process::id()));
    fs::create_dir_all(&dir)?;

    // Two classification corpora, one as a single file and one pre-split.
    let mut sc = SynthConfig::new(2, 9);
    sc.n_train = 200;
    let suite = synth_suite(&sc);
    let records = |split: Split, k: usize| -> Vec<TextRecord> {
        suite.tasks[k]
            .corpus
            .split(split)
            .iter()
            .map(|e| TextRecord {
                tokens: suite.vocab.decode(&e.tokens),
                label: match e.label {
                    Label::Class(c) => c,
                    Label::Tags(_) => unreachable!(),
                },
            })
            .collect()
    };
    let all: Vec<TextRecord> = [Split::Train, Split::Dev, Split::Test]
        .into_iter()
        .flat_map(|s| records(s, 0))
        .collect();
    write_classification(&dir.join("first.tsv"), &all)?;
    for (split, name) in [(Split::Train, "train"), (Split::Dev, "dev"), (Split::Test, "test")] {
        write_classification(&dir.join(format!("second.{name}.tsv")), &records(split, 1))?;
    }
    let config = "\
arch = meta-mtl
seed = 4
d = 16
h = 16
m = 8
z = 8
shared_h = 16
max_epochs = 6

[task:first]
kind = classification
data = first.tsv

[task:second]
kind = classification
train = second.train.tsv
dev = second.dev.tsv
test = second.test.tsv
lambda = 0.5
";
    fs::write(dir.join("run.cfg"), config)?;

    let cfg = RunConfig::from_file(&dir.join("run.cfg"))?;
    cfg.validate()?;
    let (vocab, tasks) = cfg.load_tasks()?;
    println!("vocabulary {} (hash {})", vocab.len(), &vocab.hash()[..12]);
    let mut model = build_model(cfg.arch, &tasks, &cfg.model, vocab.len(), cfg.train.seed)?;
    let log = joint_train(&mut model, &tasks, &cfg.train)?;
    print!("{}", log.to_tsv());

    let path = dir.join("model.ckpt");
    Checkpoint::full(&model, &vocab.hash())?.save(&path)?;
    let restored = Checkpoint::load(&path)?.to_model()?;
    println!("checkpoint: {} bytes", fs::metadata(&path)?.len());
    for (k, t) in tasks.iter().enumerate() {
        let a = evaluate(&model, k, &t.corpus.test)?;
        let b = evaluate(&restored, k, &t.corpus.test)?;
        println!("{}: test accuracy {:.3}, restored {:.3}", t.id, a.accuracy, b.accuracy);
    }
    fs::remove_dir_all(&dir)?;
    Ok(())
}
