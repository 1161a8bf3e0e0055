mod commands;
mod config;
mod error;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "sessrec",
    version,
    about = "Session-based recommendation: prepare, train, evaluate, explain"
)]
pub struct Cli {
    /// Directory holding prepared splits, the graph and the checkpoint
    #[arg(long, global = true, default_value = "workspace", help_heading = "Global options")]
    pub workspace: PathBuf,
    /// JSON run config; built-in defaults when absent [default: none]
    #[arg(long, global = true, help_heading = "Global options")]
    pub config: Option<PathBuf>,
    /// Sessions JSON Lines file (read by `prepare`) [default: config `sessions`]
    #[arg(long, global = true, help_heading = "Global options")]
    pub sessions: Option<PathBuf>,
    /// Items JSON Lines file (read by `prepare`) [default: config `items`]
    #[arg(long, global = true, help_heading = "Global options")]
    pub items: Option<PathBuf>,
    /// Log progress to stderr
    #[arg(short, long, global = true, default_value_t = false, help_heading = "Global options")]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter the corpus and write chronological train/valid/test splits
    Prepare(PrepareArgs),
    /// Count co-occurring pairs over training prefixes
    Graph,
    /// Train and write the best checkpoint plus a per-epoch CSV log
    Train(TrainArgs),
    /// Prec@K / MRR@K of the checkpoint on a split
    Eval(EvalArgs),
    /// Top-K items for a session
    Recommend(RecommendArgs),
    /// Top-K items for a session, each with an explanation
    Explain(ExplainArgs),
    /// Write the ID and modality embedding tables as CSV
    ExportEmbeddings(ExportArgs),
    /// Generate the planted-rule synthetic corpus
    Fixtures(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Drop items seen fewer times than this [default: config, 5]
    #[arg(long)]
    pub min_item_freq: Option<usize>,
    /// Drop sessions shorter than this after item removal [default: config, 2]
    #[arg(long)]
    pub min_session_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Embedding size [default: config, 100]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Propagation steps, 1 to 5 [default: config, 2]
    #[arg(long)]
    pub propagation_steps: Option<usize>,
    /// Weight of the auxiliary losses [default: config, 0.01]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Learning rate [default: config, 0.001]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Sessions per batch [default: config, 50]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epoch limit [default: config, 300]
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without validation improvement before stopping [default: config, 20]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Seed for initialization, shuffling and negative sampling [default: config, 42]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub fn file_stem(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Valid => "valid",
            Self::Test => "test",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Split to evaluate
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Print the report as JSON
    #[arg(long, default_value_t = false)]
    pub json: bool,
    /// Never rank the session's own prefix items above the label
    #[arg(long, default_value_t = false)]
    pub exclude_prefix: bool,
    /// Print the checkpoint manifest summary instead of evaluating
    #[arg(long, default_value_t = false)]
    pub info: bool,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    /// Comma-separated item ids, oldest first, e.g. "1,2"
    #[arg(long)]
    pub session: String,
    /// Number of items to print
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Leave out items already in the session
    #[arg(long, default_value_t = false)]
    pub exclude_session: bool,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Comma-separated item ids, oldest first, e.g. "1,5,9"
    #[arg(long)]
    pub session: String,
    /// Number of items to explain
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    /// Leave out items already in the session
    #[arg(long, default_value_t = false)]
    pub exclude_session: bool,
    /// Emit structured records as JSON
    #[arg(long, default_value_t = false)]
    pub json: bool,
    /// Pair counts must exceed this for the co-occurrence template [default: config, 10]
    #[arg(long)]
    pub count_threshold: Option<u32>,
    /// Token similarity must exceed this for the feature template [default: config, 0.8]
    #[arg(long)]
    pub sim_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Output directory [default: <workspace>/embeddings]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    /// Output directory for sessions.jsonl, items.jsonl and causes.jsonl
    #[arg(long, default_value = "fixture")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub n_items: usize,
    #[arg(long, default_value_t = 500)]
    pub n_sessions: usize,
    /// Fraction of sessions whose label follows the modality rule
    #[arg(long, default_value_t = 0.5)]
    pub mix: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn every_flag_documents_a_default() {
        let root = Cli::command();
        for sub in root.get_subcommands() {
            for arg in sub.get_arguments() {
                if arg.is_positional() || arg.get_id() == "help" || arg.get_id() == "session" {
                    continue;
                }
                let has_default = !arg.get_default_values().is_empty();
                let help = arg.get_help().map(|h| h.to_string()).unwrap_or_default();
                assert!(
                    has_default || help.contains("[default:"),
                    "{} --{} lists no default",
                    sub.get_name(),
                    arg.get_id()
                );
            }
        }
    }

    #[test]
    fn session_lists_parse() {
        let cli = Cli::try_parse_from(["sessrec", "recommend", "--session", "1,2", "--top-k", "5"]).unwrap();
        match cli.command {
            Command::Recommend(a) => assert_eq!((a.session.as_str(), a.top_k), ("1,2", 5)),
            other => panic!("{other:?}"),
        }
    }
}
