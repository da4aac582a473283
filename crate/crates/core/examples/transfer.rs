//! Leave-one-out meta transfer: a Meta-LSTM trained on three synthetic tasks
//! is frozen and reused for the fourth, against a random frozen Meta-LSTM.
//!
//!     cargo run --release --example transfer [seed]

use metalstm::data::synth_tasks;
use metalstm::diagnostics::evaluate;
use metalstm::multitask::{build_model, Architecture, ModelConfig, EMBED};
use metalstm::training::checkpoint::{tensor_hash, Checkpoint};
use metalstm::training::{extract_meta, joint_train, transfer_train, TrainConfig, TransferOptions};
use metalstm::TaskSpec;

fn main() -> metalstm::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(1, |s| s.parse().expect("seed"));
    let suite = synth_tasks(4, seed);
    let dims = ModelConfig {
        d: 16,
        h: 16,
        m: 8,
        z: 8,
        shared_h: 16,
        private_embeddings: false,
    };
    let vocab = suite.vocab.len();
    let dir = std::env::temp_dir().join(format!("metalstm-transfer-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;

    for held in 0..suite.tasks.len() {
        let others: Vec<TaskSpec> = suite
            .tasks
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != held)
            .map(|(_, t)| t.clone())
            .collect();
        let mut source = build_model(Architecture::MetaMtl, &others, &dims, vocab, seed)?;
        joint_train(
            &mut source,
            &others,
            &TrainConfig {
                max_epochs: 10,
                seed,
                ..TrainConfig::default()
            },
        )?;

        // Through a meta-only checkpoint, as the CLI does it.
        let path = dir.join(format!("meta{held}.ckpt"));
        Checkpoint::meta_only(&source, 0, &suite.vocab.hash())?.save(&path)?;
        let learned = Checkpoint::load(&path)?.meta_store()?;
        let random = extract_meta(&build_model(Architecture::MetaMtl, &others, &dims, vocab, seed + 1000)?, 0)?;

        let opts = TransferOptions {
            embeddings: Some(source.shared.value(EMBED)?.clone()),
            freeze_embeddings: false,
        };
        let cfg = TrainConfig {
            max_epochs: 2,
            seed: seed + 500,
            ..TrainConfig::default()
        };
        let target = &suite.tasks[held];
        let mut line = format!("held out {}:", target.id);
        for (name, meta) in [("learned", &learned), ("random", &random)] {
            let names = source.meta_names();
            let before = tensor_hash(meta, &names)?;
            let (model, _) = transfer_train(meta, target, &dims, vocab, &cfg, &opts)?;
            let same = tensor_hash(&model.shared, &names)? == before;
            let acc = evaluate(&model, 0, &target.corpus.test)?.accuracy;
            line.push_str(&format!(" {name} {:.1}% (meta unchanged: {same})", 100.0 * acc));
        }
        println!("{line}");
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
