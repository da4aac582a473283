//! How much the generated weights move per token. A meta-mtl model is
//! trained on the synthetic suite, then a sentence with a negated trigger is
//! traced for task 0.
//!
//!     cargo run --release --example trace

use metalstm::data::synth_tasks;
use metalstm::diagnostics::{format_trace, trace_sequence};
use metalstm::multitask::{build_model, Architecture, ModelConfig};
use metalstm::training::{joint_train, TrainConfig};

fn main() -> metalstm::Result<()> {
    let suite = synth_tasks(4, 1);
    let dims = ModelConfig {
        d: 16,
        h: 16,
        m: 8,
        z: 8,
        shared_h: 16,
        private_embeddings: false,
    };
    let mut model = build_model(Architecture::MetaMtl, &suite.tasks, &dims, suite.vocab.len(), 1)?;
    joint_train(
        &mut model,
        &suite.tasks,
        &TrainConfig {
            max_epochs: 10,
            ..TrainConfig::default()
        },
    )?;

    let t = suite.triggers[0];
    let filler = |i: usize| suite.vocab.get(&format!("w{:02}", 30 + i));
    let negated = vec![filler(0), filler(1), suite.negator, t.positive, filler(2), filler(3)];
    let plain = vec![filler(0), filler(1), filler(4), t.positive, filler(2), filler(3)];
    for (name, tokens) in [("negated trigger", &negated), ("plain trigger", &plain)] {
        println!(
            "# {name}: {} (label {:?})",
            suite.vocab.decode(tokens).join(" "),
            suite.oracle_label(0, tokens)
        );
        print!("{}", format_trace(&trace_sequence(&model, 0, tokens, &suite.vocab)?));
        println!();
    }
    Ok(())
}
