//! Closed-form parameter counts next to the sizes of the tensors a model
//! really allocates.
//!
//!     cargo run --example param_counts

use metalstm::cells::{count_params, CellKind};
use metalstm::diagnostics::param_report;
use metalstm::multitask::{build_model, Architecture, ModelConfig};
use metalstm::{Corpus, HeadKind, TaskSpec};

fn main() -> metalstm::Result<()> {
    let (d, h, m, z) = (100, 100, 20, 20);
    println!("closed form at d={d} h={h} m={m} z={z}");
    for kind in [CellKind::Standard, CellKind::Basic, CellKind::Meta, CellKind::MetaStack] {
        let c = count_params(kind, d, h, m, z);
        println!("  {kind:?}: {} ({} with bias generators)", c.formula, c.with_bias);
    }

    let dims = ModelConfig {
        d,
        h,
        m,
        z,
        shared_h: h,
        private_embeddings: false,
    };
    let tasks: Vec<TaskSpec> = ["books", "dvd"]
        .iter()
        .map(|id| TaskSpec::new(*id, HeadKind::Classification { n_classes: 2 }, Corpus::default()))
        .collect();
    for arch in Architecture::ALL {
        let model = build_model(arch, &tasks, &dims, 1_000, 0)?;
        let report = param_report(&model)?;
        println!("\n{arch}: {} parameters", report.total);
        for (store, n) in &report.store_totals {
            println!("  {store:<12} {n}");
        }
        for c in &report.cells {
            println!(
                "  cell {}/{} {:?}: enumerated {} formula {}",
                c.store, c.prefix, c.kind, c.enumerated, c.formula
            );
        }
    }
    Ok(())
}
