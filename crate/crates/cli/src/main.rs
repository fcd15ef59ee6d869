use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use shapprune::Error;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "shapprune", version, about = "Rank and prune hidden units by their contribution to the loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Train a classifier on an MNIST-layout dataset.
    Train,
    /// Score the units of every (or one) prunable site.
    Attribute,
    /// Prune every site, outermost first, and log each step.
    Prune,
    /// Layer-wise loss curves as units are removed in ranking order.
    Robustness,
    /// Attributions of the two-input max networks.
    Toy,
    /// Prune randomly initialised networks by Shapley sign.
    Randinit,
    /// Compare accuracy before and after fine-tuning pruned networks.
    FinetuneCompare,
    /// Per-unit distribution of sampled Shapley values at one site.
    SvDist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Exact,
    Biased,
}

#[derive(clap::Args, Debug, Clone)]
struct Opts {
    /// Model file to read.
    #[arg(long, global = true)]
    model: Option<PathBuf>,

    /// Directory with train-/t10k- IDX files.
    #[arg(long, global = true)]
    data: Option<PathBuf>,

    /// Metric name, a comma-separated list, or "all".
    #[arg(long, global = true)]
    metric: Option<String>,

    /// mean or conservative (mean + 2 std).
    #[arg(long, global = true, default_value = "mean")]
    ranking: String,

    /// Fraction of units removed per site.
    #[arg(long, global = true, default_value_t = 0.25)]
    ratio: f64,

    /// Sampled permutations per Shapley estimate.
    #[arg(long, global = true, default_value_t = 5)]
    samples: usize,

    /// Samples the attributions are computed on.
    #[arg(long, global = true, default_value_t = 1000)]
    attrib_samples: usize,

    /// Test samples used for evaluation.
    #[arg(long, global = true, default_value_t = 2000)]
    eval_samples: usize,

    /// Training samples (train, fine-tuning).
    #[arg(long, global = true, default_value_t = 10_000)]
    train_samples: usize,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output directory; nothing is written elsewhere.
    #[arg(long, global = true, default_value = "shapprune-out")]
    out: PathBuf,

    /// Enumerate every coalition instead of sampling permutations.
    #[arg(long, global = true)]
    exact: bool,

    #[arg(long, global = true, default_value_t = 0)]
    fine_tune_epochs: usize,

    #[arg(long, global = true, default_value_t = 0.01)]
    lr: f64,

    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Architecture for train: mlp or cnn.
    #[arg(long, global = true, default_value = "mlp")]
    arch: String,

    #[arg(long, global = true, value_enum, default_value_t = Variant::Exact)]
    variant: Variant,

    /// Restrict to one site index.
    #[arg(long, global = true)]
    site: Option<usize>,

    /// Independent seeds for randinit and finetune-compare.
    #[arg(long, global = true, default_value_t = 5)]
    runs: usize,

    #[arg(long, global = true, default_value_t = 5)]
    epochs: usize,

    /// Hidden width for randinit.
    #[arg(long, global = true, default_value_t = 2048)]
    hidden: usize,
}

fn exit_code(err: &Error) -> u8 {
    if err.is_data_error() || matches!(err, Error::Shape(_) | Error::InvalidModel(_)) {
        2
    } else if err.is_numeric_error() {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    if let Some(t) = cli.opts.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command, &cli.opts) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
