//! The `mmlm` command line: corpus building, training, instruction tuning,
//! evaluation, generation and synthetic data.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
//! Every failure is reported on stderr as one line starting `ERROR <code>:`.
//! Logs go to stderr; results meant for piping go to stdout.

pub mod commands;
pub mod error;

use clap::{Args, Parser, Subcommand, ValueEnum};
use error::{Failure, USAGE};
use std::io::Write;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "mmlm", version, about = "Desk-scale multimodal language model toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a raw JSON Lines corpus into a document archive.
    BuildCorpus(BuildCorpusArgs),
    /// Train a model on one or more document archives.
    Train(TrainArgs),
    /// Continue training a checkpoint with instruction data.
    Instruct(InstructArgs),
    /// Evaluate a checkpoint or a mock backend on a task dataset.
    Eval(EvalArgs),
    /// Generate text from a checkpoint.
    Generate(GenerateArgs),
    /// Write synthetic corpora and evaluation datasets.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Debug, Args)]
pub struct BuildCorpusArgs {
    /// Raw documents, one JSON object per line.
    #[arg(long = "in", value_name = "JSONL")]
    pub input: PathBuf,
    #[arg(long, value_name = "ARCHIVE")]
    pub out: PathBuf,
    /// Seed for the random single-image drop.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the filtering report [default: <out>.report.json].
    #[arg(long, value_name = "JSON")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_name = "ARCHIVE", num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    /// Checkpoint directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Continue from the checkpoint already in `--out`.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct InstructArgs {
    /// Overrides on top of the checkpoint's settings; training keys default
    /// to a tenth of the base peak rate and the instruction mix.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub ckpt: PathBuf,
    /// Lines of `{"instruction": ..., "input": ..., "output": ...}`.
    #[arg(long, value_name = "JSONL")]
    pub instructions: PathBuf,
    /// Document archives mixed in alongside the instructions.
    #[arg(long, value_name = "ARCHIVE", num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Output checkpoint directory [default: overwrite `--ckpt`].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mock {
    /// Every token equally likely.
    Uniform,
    /// Seeded pseudo-random distributions.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum YesArg {
    FullWord,
    FirstToken,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("backend").required(true).args(["ckpt", "mock"]))]
pub struct EvalArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(mmlm_eval::data::TASKS))]
    pub task: String,
    #[arg(long, value_name = "DIR")]
    pub ckpt: Option<PathBuf>,
    /// Score with a mock backend instead of a checkpoint.
    #[arg(long)]
    pub mock: Option<Mock>,
    #[arg(long, value_name = "JSONL")]
    pub data: PathBuf,
    #[arg(long, value_name = "JSON")]
    pub report: PathBuf,
    /// Seeds demonstration sampling and the random mock.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Demonstrations per query.
    #[arg(long, default_value_t = 0)]
    pub shots: usize,
    /// Two-stage chain-of-thought (sst2).
    #[arg(long)]
    pub cot: bool,
    /// Plain beam search instead of label-constrained decoding (imagenet).
    #[arg(long)]
    pub unconstrained: bool,
    /// Hide category descriptions (cub).
    #[arg(long)]
    pub no_descriptions: bool,
    /// How the Raven "Yes" is scored.
    #[arg(long, value_enum, default_value_t = YesArg::FullWord)]
    pub yes: YesArg,
    /// Beam width for open-ended tasks; 1 is greedy.
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long, default_value_t = mmlm_eval::tasks::DEFAULT_MAX_NEW)]
    pub max_new: usize,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_name = "DIR")]
    pub ckpt: PathBuf,
    /// Prompt text. With `--image`, an `<image>` marker places the image;
    /// without one the image follows the text.
    #[arg(long)]
    pub prompt: String,
    #[arg(long, value_name = "PNG")]
    pub image: Option<PathBuf>,
    /// Beam width; greedy when absent.
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub max_new: usize,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// A raw shape corpus with junk documents, as JSON Lines.
    Corpus {
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "JSONL")]
        out: PathBuf,
    },
    /// An evaluation dataset for one task.
    Dataset {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(mmlm_eval::data::TASKS))]
        task: String,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "JSONL")]
        out: PathBuf,
    },
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    if argv.len() <= 1 {
        let _ = writeln!(err, "{}", <Cli as clap::CommandFactory>::command().render_help());
        let _ = writeln!(err, "{}", Failure::usage("no command given").line());
        return USAGE;
    }
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            // Keep clap's explanation, drop its usage and help hints.
            let text = e.to_string();
            let body = text.split("\nUsage:").next().unwrap_or(&text);
            let _ = writeln!(err, "{}", Failure::usage(body.trim_start_matches("error: ")).line());
            return USAGE;
        }
    };
    match commands::dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "{}", f.line());
            f.code
        }
    }
}
