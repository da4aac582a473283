//! Noun-phrase chunking with a bidirectional Meta-LSTM and a CRF layer.
//! Sentences are generated, written as CoNLL, read back, trained on, and
//! scored by exact-match BIO span F1.
//!
//!     cargo run --release --example crf_tagging

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use metalstm::data::{encode_tagging, load_conll, tagset, write_conll, TaggedSentence, Vocab};
use metalstm::diagnostics::evaluate;
use metalstm::multitask::{build_model, Architecture, ModelConfig, Prediction};
use metalstm::training::{joint_train, TrainConfig};
use metalstm::{Corpus, HeadKind, TaskSpec};

const DET: &[&str] = &["the", "a", "every"];
const ADJ: &[&str] = &["big", "red", "old", "quiet"];
const NOUN: &[&str] = &["dog", "cat", "car", "tree", "river", "Anna"];
const VERB: &[&str] = &["sees", "likes", "chases", "near", "and"];

fn noun_phrase(rng: &mut ChaCha8Rng, out: &mut TaggedSentence) {
    let mut first = true;
    let mut push = |w: &str, out: &mut TaggedSentence| {
        out.tokens.push(w.to_string());
        out.tags.push(if first { "B-NP" } else { "I-NP" }.to_string());
        first = false;
    };
    if rng.gen_bool(0.7) {
        push(DET.choose(rng).unwrap(), out);
    }
    for _ in 0..rng.gen_range(0..3) {
        push(ADJ.choose(rng).unwrap(), out);
    }
    push(NOUN.choose(rng).unwrap(), out);
}

fn sentence(rng: &mut ChaCha8Rng) -> TaggedSentence {
    let mut s = TaggedSentence {
        tokens: vec![],
        tags: vec![],
    };
    noun_phrase(rng, &mut s);
    for _ in 0..rng.gen_range(1..3) {
        s.tokens.push(VERB.choose(rng).unwrap().to_string());
        s.tags.push("O".into());
        noun_phrase(rng, &mut s);
    }
    s
}

fn main() -> metalstm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dir = std::env::temp_dir().join(format!("metalstm-crf-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let mut splits = Vec::new();
    for (name, n) in [("train", 400), ("dev", 60), ("test", 100)] {
        let sents: Vec<TaggedSentence> = (0..n).map(|_| sentence(&mut rng)).collect();
        let path = dir.join(format!("{name}.conll"));
        write_conll(&path, &sents)?;
        splits.push(load_conll(&path)?);
    }
    std::fs::remove_dir_all(&dir)?;

    let lowered: Vec<Vec<String>> = splits[0]
        .iter()
        .map(|s| s.tokens.iter().map(|t| t.to_lowercase()).collect())
        .collect();
    let vocab = Vocab::build(lowered.iter().map(|v| v.as_slice()), 1);
    let tags = tagset(&splits[0]);
    println!("vocabulary {} tokens, tags {tags:?}", vocab.len());
    let corpus = Corpus {
        train: encode_tagging(&splits[0], &vocab, &tags)?,
        dev: encode_tagging(&splits[1], &vocab, &tags)?,
        test: encode_tagging(&splits[2], &vocab, &tags)?,
    };
    let task = TaskSpec::new("chunk", HeadKind::Tagging { tags: tags.clone() }, corpus);
    let dims = ModelConfig {
        d: 16,
        h: 16,
        m: 6,
        z: 6,
        shared_h: 16,
        private_embeddings: false,
    };
    let tasks = [task];
    let mut model = build_model(Architecture::SingleMeta, &tasks, &dims, vocab.len(), 2)?;
    let cfg = TrainConfig {
        max_epochs: 8,
        ..TrainConfig::default()
    };
    let log = joint_train(&mut model, &tasks, &cfg)?;
    print!("{}", log.to_tsv());

    let report = evaluate(&model, 0, &tasks[0].corpus.test)?;
    print!("\n{}", report.to_kv());

    let sample = &splits[2][0];
    if let Prediction::Tags(pred) = model.predict(0, &vocab.encode(&lowered_tokens(sample)))? {
        for (w, (gold, p)) in sample.tokens.iter().zip(sample.tags.iter().zip(pred)) {
            println!("{w:<8} {gold:<6} {}", tags[p]);
        }
    }
    Ok(())
}

fn lowered_tokens(s: &TaggedSentence) -> Vec<String> {
    s.tokens.iter().map(|t| t.to_lowercase()).collect()
}
