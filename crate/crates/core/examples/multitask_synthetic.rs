//! Joint training of every architecture on the synthetic suite, with the
//! per-task dev curve of the meta-mtl run.
//!
//!     cargo run --release --example multitask_synthetic [n_train] [seed]

use std::time::Instant;

use metalstm::data::{synth_suite, SynthConfig};
use metalstm::diagnostics::evaluate;
use metalstm::multitask::{build_model, Architecture, ModelConfig};
use metalstm::training::{joint_train, TrainConfig};

fn main() -> metalstm::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_train: usize = args.next().map_or(200, |s| s.parse().expect("n_train"));
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let mut sc = SynthConfig::new(4, seed);
    sc.n_train = n_train;
    let suite = synth_suite(&sc);
    let dims = ModelConfig {
        d: 16,
        h: 16,
        m: 8,
        z: 8,
        shared_h: 16,
        private_embeddings: false,
    };
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };

    for arch in Architecture::ALL {
        let t = Instant::now();
        let mut accs = Vec::new();
        if arch.is_single() {
            // One model per task.
            for task in &suite.tasks {
                let one = std::slice::from_ref(task);
                let mut model = build_model(arch, one, &dims, suite.vocab.len(), seed)?;
                joint_train(&mut model, one, &cfg)?;
                accs.push(evaluate(&model, 0, &task.corpus.test)?.accuracy);
            }
        } else {
            let mut model = build_model(arch, &suite.tasks, &dims, suite.vocab.len(), seed)?;
            let log = joint_train(&mut model, &suite.tasks, &cfg)?;
            for (k, task) in suite.tasks.iter().enumerate() {
                accs.push(evaluate(&model, k, &task.corpus.test)?.accuracy);
            }
            if arch == Architecture::MetaMtl {
                println!("meta-mtl dev accuracy by epoch (best epoch {}):", log.best_epoch);
                for task in &suite.tasks {
                    let curve: Vec<String> = log
                        .for_task(&task.id)
                        .map(|r| format!("{:.2}", r.dev_metric.unwrap_or(f64::NAN)))
                        .collect();
                    println!("  {} {}", task.id, curve.join(" "));
                }
            }
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let shown: Vec<String> = accs.iter().map(|a| format!("{:.1}", 100.0 * a)).collect();
        println!("{:<12} test acc {} mean {:.1}% ({:.1?})", arch.name(), shown.join(" "), 100.0 * mean, t.elapsed());
    }
    Ok(())
}
