//! The `distill-ner` command line.
//!
//! Every subcommand accepts `--config FILE` (TOML, see [`FileConfig`]);
//! flags given on the command line take precedence over file values.
//! Failures print one line `error[<category>]: <message>` to stderr and
//! exit nonzero.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};

pub use config::{FileConfig, GridSettings, ModelDims};

use crate::bench::ThreadMode;
use crate::distill::MixStrategy;
use crate::error::Error;
use crate::numerics::KlDirection;
use crate::tagger::Classifier;

#[derive(Debug, Parser)]
#[command(
    name = "distill-ner",
    version,
    about = "Train compact NER taggers with teacher distillation"
)]
pub struct Cli {
    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic tagged corpus (train/dev/test CoNLL files).
    Synth(SynthArgs),
    /// Draw labeled subsets of a training corpus into a split manifest.
    SampleSplits(SampleSplitsArgs),
    /// Train a tagger on labeled data only.
    Train(TrainArgs),
    /// Train a tagger from labeled data, unlabeled data and teacher logits.
    Distill(DistillArgs),
    /// Score a model on a tagged file.
    Eval(EvalArgs),
    /// Tag a file and print CoNLL output.
    Predict(PredictArgs),
    /// Write a model's emission logits in the teacher-logits format.
    ExportLogits(ExportArgs),
    /// Time inference and print speedup tables.
    Bench(BenchArgs),
    /// Train and score every split with every variant.
    Grid(GridArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArg {
    /// TOML config file; command-line flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelFlags {
    #[arg(long)]
    pub word_dim: Option<usize>,
    #[arg(long)]
    pub char_dim: Option<usize>,
    #[arg(long)]
    pub char_filters: Option<usize>,
    /// Odd character convolution width.
    #[arg(long)]
    pub char_window: Option<usize>,
    /// Hidden units per LSTM direction.
    #[arg(long)]
    pub lstm_hidden: Option<usize>,
    #[arg(long, value_enum)]
    pub classifier: Option<Classifier>,
    /// Double the LSTM width (teacher-sized model).
    #[arg(long)]
    pub teacher_sized: bool,
    /// Pretrained word vectors; their width must equal --word-dim.
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OptimFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Batch size for dev-set scoring.
    #[arg(long)]
    pub eval_batch_size: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ObjectiveFlags {
    /// Softmax temperature of the distillation term.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub task_weight: Option<f64>,
    #[arg(long)]
    pub distill_weight: Option<f64>,
    /// Multiply the distillation term by T².
    #[arg(long, value_name = "BOOL")]
    pub scale_by_t2: Option<bool>,
    #[arg(long, value_enum)]
    pub kl_direction: Option<KlDirection>,
    /// Batch composition.
    #[arg(long, value_enum)]
    pub mix: Option<MixStrategy>,
    /// Labeled share of each batch with --mix fixed-ratio.
    #[arg(long)]
    pub labeled_fraction: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SplitFlags {
    /// Split manifest; with it --labeled is the whole training corpus.
    #[arg(long, value_name = "FILE", requires = "split_index")]
    pub split_manifest: Option<PathBuf>,
    /// Line of the manifest to use (0-based).
    #[arg(long, requires = "split_manifest")]
    pub split_index: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 500)]
    pub dev: usize,
    #[arg(long, default_value_t = 500)]
    pub test: usize,
    /// Distinct names per entity type.
    #[arg(long, default_value_t = 200)]
    pub pool_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SampleSplitsArgs {
    /// Training corpus (CoNLL).
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    /// Labeled sample sizes.
    #[arg(long, value_delimiter = ',', default_value = "150,300,750,1500,3000")]
    pub sizes: Vec<usize>,
    /// Samples per size.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Manifest path; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Tagged training sentences (CoNLL).
    #[arg(long, value_name = "FILE")]
    pub labeled: PathBuf,
    #[command(flatten)]
    pub split: SplitFlags,
    /// Tagged dev sentences for model selection.
    #[arg(long, value_name = "FILE")]
    pub dev: PathBuf,
    /// Where to write the selected checkpoint.
    #[arg(long, value_name = "FILE")]
    pub model_out: PathBuf,
    /// Where to write the training report (JSON).
    #[arg(long, value_name = "FILE")]
    pub report_out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub optim: OptimFlags,
}

#[derive(Debug, Clone, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Unlabeled sentences (first column read). Ids continue after the
    /// labeled file's.
    #[arg(long, value_name = "FILE")]
    pub unlabeled: Option<PathBuf>,
    /// Teacher logits covering every labeled and unlabeled sentence.
    #[arg(long, value_name = "FILE")]
    pub teacher_logits: Option<PathBuf>,
    #[command(flatten)]
    pub objective: ObjectiveFlags,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Tagged sentences (CoNLL).
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Also write the report as JSON.
    #[arg(long, value_name = "FILE")]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Sentences to tag (first column read).
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Output path; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Corpus files, numbered as if concatenated in the given order.
    #[arg(long, value_name = "FILE", required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Checkpoint to time, as LABEL=PATH or PATH; repeatable.
    #[arg(long = "model", value_name = "[LABEL=]FILE", required = true)]
    pub models: Vec<String>,
    /// Sentences to tag (first column read).
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub batch_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub warmup_passes: Option<usize>,
    #[arg(long)]
    pub measured_passes: Option<usize>,
    #[arg(long, value_enum)]
    pub thread_mode: Option<ThreadMode>,
    /// Workers in pooled mode (0 = one per core).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Label speedups are computed against; defaults to the first model.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Externally measured timings (JSON lines of model, batch_size, seconds).
    #[arg(long, value_name = "FILE")]
    pub external: Option<PathBuf>,
    /// Write per-row results as JSON lines.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Full training corpus the manifest indexes into.
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub dev: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub test: PathBuf,
    /// Split manifest from sample-splits.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Comma-separated subset of baseline-softmax, baseline-crf,
    /// distilled-softmax, distilled-crf.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Teacher logits for the training corpus (needed by distilled variants).
    #[arg(long, value_name = "FILE")]
    pub teacher_logits: Option<PathBuf>,
    /// Cells trained concurrently.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Per-cell results as JSON lines.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Save every cell's checkpoint here.
    #[arg(long, value_name = "DIR")]
    pub checkpoint_dir: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub optim: OptimFlags,
    #[command(flatten)]
    pub objective: ObjectiveFlags,
}

fn report(err: &Error) -> i32 {
    let msg = err.to_string().replace('\n', " ");
    match err {
        Error::Usage(_) => {
            eprintln!("error[usage]: {msg} (see --help)");
            2
        }
        _ => {
            eprintln!("error[{}]: {msg}", err.category());
            1
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            return report(&Error::Usage(first.to_string()));
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => report(&e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    fn flags_of(sub: &str) -> Vec<String> {
        let cmd = Cli::command();
        let sub = cmd.find_subcommand(sub).unwrap();
        sub.get_arguments()
            .filter_map(|a| a.get_long().map(str::to_string))
            .collect()
    }

    fn help_of(sub: &str) -> String {
        let mut cmd = Cli::command();
        cmd.build();
        let mut sub = cmd.find_subcommand(sub).unwrap().clone();
        sub.render_long_help().to_string()
    }

    /// Every field of the resolved training config has a flag.
    #[test]
    fn distill_help_covers_training_schema() {
        let schema = serde_json::to_value(crate::distill::DistillConfig::default()).unwrap();
        let help = help_of("distill");
        for key in schema.as_object().unwrap().keys() {
            let flag = format!("--{}", key.replace('_', "-"));
            assert!(help.contains(&flag), "distill --help lacks {flag}");
        }
        let dims = serde_json::to_value(ModelDims::default()).unwrap();
        for key in dims.as_object().unwrap().keys() {
            let flag = format!("--{}", key.replace('_', "-"));
            assert!(help.contains(&flag), "distill --help lacks {flag}");
        }
    }

    #[test]
    fn every_flag_is_in_help() {
        for sub in Cli::command().get_subcommands() {
            let name = sub.get_name().to_string();
            let help = help_of(&name);
            for flag in flags_of(&name) {
                assert!(help.contains(&format!("--{flag}")), "{name} --help lacks --{flag}");
            }
        }
    }

    #[test]
    fn bench_help_covers_bench_schema() {
        let schema = serde_json::to_value(crate::bench::BenchConfig::default()).unwrap();
        let help = help_of("bench");
        for key in schema.as_object().unwrap().keys() {
            let flag = format!("--{}", key.replace('_', "-"));
            assert!(help.contains(&flag), "bench --help lacks {flag}");
        }
    }
}
