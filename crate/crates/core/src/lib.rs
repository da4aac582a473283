pub mod cells;
pub mod cli;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod heads;
pub mod multitask;
pub mod numeric;
pub mod task;
pub mod training;

pub use error::{Error, Result};
pub use task::{Corpus, Example, HeadKind, Label, Split, TaskSpec};
