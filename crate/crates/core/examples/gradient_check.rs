//! Finite-difference check of the taped gradients for every architecture,
//! with a classifier and a CRF tagger sharing the model.
//!
//!     cargo run --release --example gradient_check

use metalstm::diagnostics::model_grad_check;
use metalstm::multitask::{build_model, Architecture, ModelConfig};
use metalstm::{Corpus, Example, HeadKind, Label, TaskSpec};

fn main() -> metalstm::Result<()> {
    let dims = ModelConfig {
        d: 6,
        h: 6,
        m: 3,
        z: 3,
        shared_h: 6,
        private_embeddings: false,
    };
    let tasks = [
        TaskSpec::new("sentiment", HeadKind::Classification { n_classes: 2 }, Corpus::default()),
        TaskSpec::new(
            "chunk",
            HeadKind::Tagging {
                tags: vec!["O".into(), "B-NP".into(), "I-NP".into()],
            },
            Corpus::default(),
        ),
    ];
    let batches = [
        vec![
            Example {
                tokens: vec![2, 3, 4],
                label: Label::Class(1),
            },
            Example {
                tokens: vec![5, 2],
                label: Label::Class(0),
            },
        ],
        vec![Example {
            tokens: vec![4, 5, 6, 2],
            label: Label::Tags(vec![1, 2, 0, 1]),
        }],
    ];
    println!("{:<12} {:<10} {:>12} {:>7}", "arch", "task", "max rel err", "coords");
    for arch in Architecture::ALL {
        let model = build_model(arch, &tasks, &dims, 8, 3)?;
        for (k, batch) in batches.iter().enumerate() {
            let r = model_grad_check(&model, k, batch, 1e-5, 20, 1)?;
            println!("{:<12} {:<10} {:>12.2e} {:>7}", arch.name(), tasks[k].id, r.max_rel_error, r.coordinates);
        }
    }
    Ok(())
}
