mod commands;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use inkrnn::Error;

#[derive(Parser, Debug)]
#[command(name = "inkrnn", version, about = "Recognize and draw online handwritten characters with recurrent networks")]
struct Cli {
    /// Seed for every random choice; echoed in each report.
    #[arg(long, global = true, env = "INKRNN_SEED", default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Remove redundant points and normalize coordinates.
    Preprocess(PreprocessArgs),
    /// Write a synthetic corpus built from the glyph templates.
    Synth(SynthArgs),
    /// Train a classifier.
    TrainClf(TrainClfArgs),
    /// Train a generator.
    TrainGen(TrainGenArgs),
    /// Score a classifier on a corpus, optionally with sub-sequence ensembles.
    Eval(EvalArgs),
    /// Draw characters of one class with a trained generator.
    Sample(SampleArgs),
    /// Classify generated characters with a trained classifier.
    Quality(QualityArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetName {
    Recognition,
    Generation,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    preset: PresetName,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    /// Standard deviation of per-point jitter.
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    #[arg(long, default_value_t = 0.8)]
    min_scale: f64,
    #[arg(long, default_value_t = 1.2)]
    max_scale: f64,
    #[arg(long, default_value_t = 10.0)]
    max_rotation: f64,
    /// Resampling step in template units; 0 keeps only control points.
    #[arg(long, default_value_t = 0.1)]
    resample_step: f64,
    #[arg(long, default_value_t = 0.3)]
    step_jitter: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Optimizer settings shared by both trainers.
#[derive(Args, Debug)]
struct OptArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// Epochs without improvement before the learning rate decays.
    #[arg(long)]
    patience: Option<usize>,
    /// Factor applied to the learning rate on a plateau.
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    min_lr: Option<f64>,
    /// Accepted for compatibility; training runs on one thread and the
    /// result does not depend on this value.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct TrainClfArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// net1..net6 or desk-clf.
    #[arg(long, default_value = "desk-clf")]
    arch: String,
    /// Output classes; defaults to the corpus inventory.
    #[arg(long)]
    classes: Option<usize>,
    /// Recurrent layer sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    full_dim: Option<usize>,
    #[arg(long, value_parser = ["lstm", "gru"])]
    cell: Option<String>,
    #[arg(long)]
    dropout_pool: Option<f64>,
    #[arg(long)]
    dropout_input: Option<f64>,
    #[command(flatten)]
    opt: OptArgs,
    /// Checkpoint base path; writes `<path>.json` and `<path>.bin`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Input is already preprocessed for recognition.
    #[arg(long)]
    preprocessed: bool,
    /// Print the resolved configuration and stop.
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct TrainGenArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// gen-paper or desk-gen.
    #[arg(long, default_value = "desk-gen")]
    arch: String,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    transform_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    output_dim: Option<usize>,
    #[arg(long)]
    mixtures: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Pen-state loss weights for down, up and end-of-char.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    max_len: Option<usize>,
    #[command(flatten)]
    opt: OptArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Input is already preprocessed for generation.
    #[arg(long)]
    preprocessed: bool,
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Sub-sequences averaged per decision.
    #[arg(long, default_value_t = 1)]
    ensemble: usize,
    /// Sequential-dropout rate for the sub-sequences.
    #[arg(long, default_value_t = 0.0)]
    p: f64,
    #[arg(long)]
    preprocessed: bool,
    /// Include the confusion matrix in the report.
    #[arg(long)]
    confusion: bool,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    class: usize,
    #[arg(long, default_value_t = 9)]
    n: usize,
    /// Directory for one SVG per sample.
    #[arg(long)]
    svg_out: Option<PathBuf>,
    /// JSONL file for the sampled ink.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Step cap; defaults to the generator's configuration.
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args, Debug)]
struct QualityArgs {
    #[arg(long)]
    gen: PathBuf,
    #[arg(long)]
    clf: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_per_class: usize,
    /// Classes to score, comma separated; defaults to all.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<usize>>,
    /// Number of lowest-accuracy classes to list.
    #[arg(long, default_value_t = 5)]
    worst: usize,
}

/// Distinct exit status per error kind.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::Parse { .. } => 4,
        Error::Value { .. } => 5,
        Error::Json(_) => 6,
        Error::InvalidConfig(_) => 7,
        Error::Config(_) => 8,
        Error::EmptyInk => 9,
        Error::DegenerateInk(_) => 10,
        Error::EmptyInput => 11,
        Error::Label { .. } => 12,
        Error::Token(_) => 13,
        Error::Shape(_) => 14,
        Error::Tape(_) => 15,
        Error::Numerical(_) => 16,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(a) => commands::preprocess(cli.seed, a),
        Command::Synth(a) => commands::synth(cli.seed, a),
        Command::TrainClf(a) => commands::train_clf(cli.seed, a),
        Command::TrainGen(a) => commands::train_gen(cli.seed, a),
        Command::Eval(a) => commands::eval(cli.seed, a),
        Command::Sample(a) => commands::sample(cli.seed, a),
        Command::Quality(a) => commands::quality(cli.seed, a),
    };
    match result {
        Ok(report) => {
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            // A closed pipe (e.g. `| head`) is not a failure of the command.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
