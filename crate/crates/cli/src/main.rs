//! `tof`: dialogue selection, flowchart construction, evaluation, merging,
//! path sampling and prompt assembly from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 oracle backend error.

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::FileConfig;

#[derive(Debug, Parser)]
#[command(name = "tof", version, about = "Task-oriented flowchart pipeline")]
struct Cli {
    /// JSON settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Greedy,
    Ilp,
    LpRounding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorpusFormat {
    Jsonl,
    Multiwoz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassifierArg {
    Rules,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CoherenceArg {
    Rules,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpeakerArg {
    Customer,
    Agent,
}

/// Oracle selection shared by subcommands that consult one. Without
/// `--backend` or `--replay` the offline rule oracle answers.
#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    /// Chat-completion endpoint root; enables the remote backend.
    #[arg(long, value_name = "URL")]
    pub backend: Option<String>,
    /// Model name sent to the remote backend.
    #[arg(long)]
    pub model: Option<String>,
    /// Answer from a recorded transcript instead of a live oracle.
    #[arg(long, value_name = "FILE", conflicts_with = "backend")]
    pub replay: Option<PathBuf>,
    /// Append every exchange to a transcript file.
    #[arg(long, value_name = "FILE", conflicts_with = "replay")]
    pub record: Option<PathBuf>,
    /// Extra rule-oracle lexicons (JSON).
    #[arg(long, value_name = "FILE")]
    pub lexicons: Option<PathBuf>,
    /// Seed the rule oracle with the node labels of a chart.
    #[arg(long, value_name = "MMD")]
    pub lexicon_chart: Option<PathBuf>,
    /// Concurrent oracle calls during evaluation.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pick a minimum-cost set of dialogues covering every intent.
    Select {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: CorpusFormat,
        /// Separate dialogue-act file for the MultiWOZ format.
        #[arg(long, requires = "corpus")]
        acts: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Cost a dialogue by its utterance count instead of 1.
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        weighted: Option<bool>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a flowchart from dialogues.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        /// Chart name (defaults to `chart`).
        #[arg(long)]
        name: Option<String>,
        #[command(flatten)]
        oracle: OracleArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a chart against dialogues (UMR and CPC).
    Eval {
        #[arg(long)]
        chart: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Accept any start-to-end window instead of the first one.
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        relaxed: Option<bool>,
        #[arg(long, value_enum)]
        classifier: Option<ClassifierArg>,
        /// Fixed node assignments (JSONL of {"id", "nodes"}) instead of a
        /// classifier.
        #[arg(long, value_name = "FILE")]
        assignments: Option<PathBuf>,
        /// Score only one side of each dialogue.
        #[arg(long, value_enum)]
        speaker: Option<SpeakerArg>,
        #[command(flatten)]
        oracle: OracleArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge charts into one global chart.
    Merge {
        #[arg(long, num_args = 1.., required = true)]
        charts: Vec<PathBuf>,
        /// Clustering similarity cut.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, value_enum)]
        coherence: Option<CoherenceArg>,
        /// Pairwise similarity required by the rule coherence judge.
        #[arg(long)]
        coherence_threshold: Option<f64>,
        #[arg(long)]
        name: Option<String>,
        /// Personal names to flag in the privacy scan, one per line.
        #[arg(long, value_name = "FILE")]
        names: Option<PathBuf>,
        #[command(flatten)]
        oracle: OracleArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enumerate and sample start-to-end paths.
    Sample {
        #[arg(long)]
        chart: PathBuf,
        /// Number of paths (all when omitted).
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        /// Extra visits allowed per node.
        #[arg(long)]
        revisit: Option<usize>,
        /// Enumeration limit.
        #[arg(long)]
        cap: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn sampled paths into dialogue-generation jobs.
    GenJobs {
        #[arg(long)]
        chart: PathBuf,
        #[arg(long)]
        paths: PathBuf,
        /// Step phrasing per node type (JSON).
        #[arg(long, value_name = "FILE")]
        template: Option<PathBuf>,
        /// Jobs per path.
        #[arg(long)]
        repeat: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Package generated dialogues as training samples.
    Package {
        #[arg(long)]
        chart: PathBuf,
        /// Dialogue JSONL.
        #[arg(long, required_unless_present = "transcripts", conflicts_with = "transcripts")]
        dialogues: Option<PathBuf>,
        /// Raw transcripts, JSONL of {"id", "text"}.
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble a flowchart-augmented system prompt.
    Prompt {
        #[arg(long, num_args = 1.., required = true)]
        charts: Vec<PathBuf>,
        #[arg(long)]
        schemas: Option<PathBuf>,
        /// Task description placed before the charts.
        #[arg(long, conflicts_with = "description_file")]
        description: Option<String>,
        #[arg(long, value_name = "FILE")]
        description_file: Option<PathBuf>,
        /// Ask the agent to tag every reply with its current node.
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        tracking: Option<bool>,
        #[arg(long)]
        out: PathBuf,
    },
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
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let result = FileConfig::load(cli.config.as_deref()).and_then(|cfg| commands::dispatch(cli.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tof: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
