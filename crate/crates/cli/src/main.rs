//! `molfrag`: fragment vocabularies, bi-scale model training and
//! attribution analysis from the command line.
//!
//! Exit status is 0 on success, 1 for usage errors, 2 for bad input data,
//! files or configuration, and 3 for internal failures. Failures print a
//! single `error[kind]: message` line to stderr.

mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "molfrag",
    version,
    about = "Fragment tokenization and bi-scale molecular modeling"
)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Run single-threaded.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn a fragment vocabulary from a SMILES corpus.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        /// Target number of atom and fragment entries.
        #[arg(long, default_value_t = 500)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tokenize a corpus into fragment ids.
    Tokenize {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Emit the statistics table instead of token sequences.
        #[arg(long)]
        stats: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tokenizer statistics (fallback and unknown rates) per corpus.
    Stats {
        #[arg(long)]
        vocab: PathBuf,
        /// One row per corpus; the dataset name is the file stem.
        #[arg(long, required = true)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Masked-fragment pretraining.
    Pretrain {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV (step, loss, masked_accuracy).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Two-stage fine-tuning on a labeled file.
    Finetune {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: LabeledArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Per-split metric report CSV.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Per-epoch loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Attention-rollout scores for every token of every molecule.
    Attribute {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Post-hoc analyses of a trained model.
    Analyze {
        #[command(subcommand)]
        analysis: Analysis,
    },
}

#[derive(Debug, Subcommand)]
enum Analysis {
    /// Spread of contextual token states around their token centroids.
    TokenSpace {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Agreement between clusters of token states and of fragment
    /// fingerprints.
    Nmi {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use at most this many token occurrences (in corpus order).
        #[arg(long)]
        max_items: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Embedding export CSV with cluster labels.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Metric drop after deleting the top- and bottom-attributed fragments
    /// on the test split.
    Fidelity {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: LabeledArgs,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Bootstrap resamples of the evaluated molecules.
        #[arg(long, default_value_t = 1000)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Task {
    Binary,
    Regression,
}

#[derive(Debug, Args)]
struct LabeledArgs {
    /// Tab-separated SMILES and label columns.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_enum, default_value_t = Task::Binary)]
    task: Task,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Train, valid and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    fractions: String,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides applied after the file, e.g. `--set epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let flat = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {flat}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn parse_fractions(text: &str) -> Result<[f64; 3], CliError> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--fractions expects three numbers, got `{text}`")))?;
    <[f64; 3]>::try_from(parts).map_err(|_| CliError::Usage(format!("--fractions expects three numbers, got `{text}`")))
}
