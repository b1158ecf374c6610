mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::CliError;

/// Difficulty-conditioned piano sight-reading exercise pipeline.
///
/// Every subcommand reads an optional flat JSON config (`--config`); flags
/// override file values, and the resolved configuration is written next to
/// the outputs.
#[derive(Parser, Debug)]
#[command(name = "sightgen", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat JSON file of settings; keys are the long flag names with `_`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a folder of MusicXML files and report parse statistics.
    Ingest(IngestArgs),
    /// Segment pieces into fragments and write their descriptor CSV.
    Descriptors(DescriptorsArgs),
    /// Fit the normalizer and naive Bayes labeler from a labeled descriptor CSV.
    FitGnb(FitGnbArgs),
    /// Build the labeled, split and balanced fragment dataset.
    Dataset(DatasetArgs),
    /// Train a conditioned model on a dataset.
    Train(TrainArgs),
    /// Generate exercises for one difficulty class.
    Generate(GenerateArgs),
    /// Measure how well generated exercises match their prompted class.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on a tiny model.
    GradCheck(GradCheckArgs),
    /// Write a synthetic graded corpus of MusicXML pieces with levels.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Folder scanned recursively for .musicxml and .xml files.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Report file (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct DescriptorsArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Folder of MusicXML pieces.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// JSON object mapping file stems to integer difficulty levels.
    #[arg(long)]
    pub levels: Option<PathBuf>,
    /// Descriptor CSV to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct FitGnbArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Labeled descriptor CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Labeler JSON to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct DatasetArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Folder of MusicXML source pieces.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Labeler JSON from `fit-gnb`.
    #[arg(long)]
    pub labeler: Option<PathBuf>,
    /// Output folder for the manifest, vocabulary and build log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Minimum corpus count for a token to enter the vocabulary.
    #[arg(long)]
    pub min_count: Option<u64>,
    /// Fraction of pieces assigned to training.
    #[arg(long)]
    pub split_ratio: Option<f64>,
    /// Add both tritone transpositions of training fragments.
    #[arg(long, overrides_with = "no_augment")]
    #[serde(skip)]
    pub augment: bool,
    /// Do not augment.
    #[arg(long)]
    #[serde(skip)]
    pub no_augment: bool,
    /// Downsample training classes to the minority count.
    #[arg(long, overrides_with = "no_balance")]
    #[serde(skip)]
    pub balance: bool,
    /// Keep the natural class distribution.
    #[arg(long)]
    #[serde(skip)]
    pub no_balance: bool,
    /// Seed for splitting and balancing.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Dataset folder from `dataset`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output folder for the checkpoint, vocabulary and training log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Conditioning prompt format.
    #[arg(long, value_parser = ["diff", "diff_cot", "feats", "feats_cot"])]
    pub prompt_type: Option<String>,
    /// Weight of the auxiliary difficulty loss.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Stop the auxiliary gradient at the END hidden state.
    #[arg(long, overrides_with = "no_detach")]
    #[serde(skip)]
    pub detach: bool,
    /// Let the auxiliary gradient reach the language model.
    #[arg(long)]
    #[serde(skip)]
    pub no_detach: bool,
    /// Model width.
    #[arg(long)]
    pub d_model: Option<usize>,
    /// Transformer layers.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Attention heads.
    #[arg(long)]
    pub heads: Option<usize>,
    /// Feed-forward width.
    #[arg(long)]
    pub d_ff: Option<usize>,
    /// Longest sequence (prompt plus music) the model accepts.
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Dropout probability.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Peak learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Sequences per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Maximum training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Linear warmup steps before cosine decay.
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    /// Decoupled weight decay.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Gradient norm clip per parameter group.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Evaluate every this many epochs.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Evaluations without improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Seed for initialization, shuffling and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Labeler for model selection by generation accuracy; without it the
    /// lowest validation loss wins.
    #[arg(long)]
    pub labeler: Option<PathBuf>,
    /// Generated samples per selection evaluation, split over the classes.
    #[arg(long)]
    pub select_samples: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct SamplerArgs {
    /// Softmax temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Always take the most likely token.
    #[arg(long)]
    #[serde(skip)]
    pub greedy: bool,
    /// Sample from the k most likely tokens; 0 disables the cut.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Maximum generated tokens per exercise.
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// Maximum measures per exercise.
    #[arg(long)]
    pub bar_limit: Option<usize>,
    /// Mask tokens the score grammar does not allow.
    #[arg(long, overrides_with = "no_grammar_filter")]
    #[serde(skip)]
    pub grammar_filter: bool,
    /// Sample from the raw distribution.
    #[arg(long)]
    #[serde(skip)]
    pub no_grammar_filter: bool,
    /// Base seed; exercise i uses seed + i.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Checkpoint from `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Vocabulary file; defaults to vocab.txt beside the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Labeler JSON; adds descriptors and posteriors to the sidecars.
    #[arg(long)]
    pub labeler: Option<PathBuf>,
    /// Difficulty class to generate.
    #[arg(long, value_parser = ["easy", "medium", "advanced"])]
    pub class: Option<String>,
    /// Number of exercises.
    #[arg(long)]
    pub n: Option<usize>,
    /// Output folder.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub sampler: SamplerArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Checkpoint from `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Vocabulary file; defaults to vocab.txt beside the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Labeler JSON used to classify generated exercises.
    #[arg(long)]
    pub labeler: Option<PathBuf>,
    /// Dataset folder; adds the validation CE to the report.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Samples per class.
    #[arg(long)]
    pub n_per_class: Option<usize>,
    /// Report file (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub sampler: SamplerArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct GradCheckArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Precision of the analytic gradients.
    #[arg(long, value_parser = ["f64", "f32"])]
    pub precision: Option<String>,
    /// Largest accepted relative error.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Seed for the model and batches.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report file (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Number of pieces; levels cycle 0, 1, 2.
    #[arg(long)]
    pub pieces: Option<usize>,
    /// Measures per piece.
    #[arg(long)]
    pub bars: Option<usize>,
    /// Generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output folder for the pieces and levels.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let common = match &cli.command {
        Command::Ingest(a) => &a.common,
        Command::Descriptors(a) => &a.common,
        Command::FitGnb(a) => &a.common,
        Command::Dataset(a) => &a.common,
        Command::Train(a) => &a.common,
        Command::Generate(a) => &a.common,
        Command::Eval(a) => &a.common,
        Command::GradCheck(a) => &a.common,
        Command::Synth(a) => &a.common,
    };
    if common.jobs == 0 {
        return Err(CliError::Usage("--jobs must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Descriptors(a) => commands::descriptors(a),
        Command::FitGnb(a) => commands::fit_gnb(a),
        Command::Dataset(a) => commands::dataset(a),
        Command::Train(a) => commands::train(a),
        Command::Generate(a) => commands::generate(a),
        Command::Eval(a) => commands::eval(a),
        Command::GradCheck(a) => commands::grad_check(a),
        Command::Synth(a) => commands::synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", CliError::Usage(e.render().to_string().trim().to_string()).to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
