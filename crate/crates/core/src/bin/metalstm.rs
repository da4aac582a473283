use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use metalstm::cli::{self, CommonArgs, MetaSource};
use metalstm::data::SynthConfig;
use metalstm::multitask::Architecture;
use metalstm::Split;

/// Meta-LSTM multi-task training. Internal parallelism is capped by
/// METALSTM_THREADS.
#[derive(Parser)]
#[command(name = "metalstm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// single-lstm, single-meta, ssp, psp or meta-mtl.
    #[arg(long)]
    arch: Option<Architecture>,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl From<Common> for CommonArgs {
    fn from(c: Common) -> Self {
        CommonArgs {
            config: c.config,
            seed: c.seed,
            out: c.out,
            arch: c.arch,
            overrides: c.overrides,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Joint training; writes checkpoints, logs and a test report.
    Train(Common),
    /// Evaluates a full checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Trains tasks under a frozen Meta-LSTM.
    Transfer {
        #[command(flatten)]
        common: Common,
        /// Meta checkpoint to transfer.
        #[arg(long, required_unless_present = "leave_one_out")]
        meta: Option<PathBuf>,
        /// Only this task (default: every task in the config).
        #[arg(long, conflicts_with = "leave_one_out")]
        task: Option<String>,
        /// Train the meta on all other tasks, once per task.
        #[arg(long)]
        leave_one_out: bool,
    },
    /// Parameter report, gradient check and weight-change traces.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// One whitespace-tokenised sentence per line to trace.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        task: Option<String>,
    },
    /// Writes a synthetic suite and a config for it.
    Synth {
        #[arg(long, default_value_t = 4)]
        tasks: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        dev: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
    },
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Train(c) => cli::cmd_train(&c.into()),
        Command::Eval {
            common,
            checkpoint,
            split,
        } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Dev => Split::Dev,
                SplitArg::Test => Split::Test,
            };
            cli::cmd_eval(&common.into(), &checkpoint, split)
        }
        Command::Transfer {
            common,
            meta,
            task,
            leave_one_out,
        } => {
            let source = match meta {
                Some(path) if !leave_one_out => MetaSource::Checkpoint { path, task },
                _ => MetaSource::LeaveOneOut,
            };
            cli::cmd_transfer(&common.into(), &source)
        }
        Command::Diagnose {
            common,
            checkpoint,
            input,
            task,
        } => cli::cmd_diagnose(&common.into(), checkpoint.as_deref(), input.as_deref(), task.as_deref()),
        Command::Synth {
            tasks,
            seed,
            out,
            train,
            dev,
            test,
        } => {
            let mut cfg = SynthConfig::new(tasks, seed);
            cfg.n_train = train.unwrap_or(cfg.n_train);
            cfg.n_dev = dev.unwrap_or(cfg.n_dev);
            cfg.n_test = test.unwrap_or(cfg.n_test);
            cli::cmd_synth(&cfg, &out)
        }
    };
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
