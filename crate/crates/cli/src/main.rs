//! `memtopo`: train, evaluate and report topology-trained spiking networks.

mod cluster;
mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use memtopo_core::baselines::{BaselineKind, ProgrammingNoiseForm, Task};

#[derive(Parser, Debug)]
#[command(
    name = "memtopo",
    version,
    about = "Topology-only training on simulated memristor crossbars"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print a complete configuration file with every default filled in.
    Config(ConfigArgs),
    /// Train one arm and write a checkpoint plus its training history.
    Train(TrainArgs),
    /// Evaluate a checkpoint under a stop policy and read noise.
    Eval(EvalArgs),
    /// Sweep stop thresholds or read-noise scales over a checkpoint.
    Sweep(SweepArgs),
    /// Train and evaluate every arm on one task.
    Baselines(BaselinesArgs),
    /// Programming-noise sensitivity of one arm.
    ProgrammingNoise(ProgrammingNoiseArgs),
    /// Write time-averaged penultimate features of the classifier to CSV.
    ExportEmbeddings(ExportArgs),
    /// Aggregate result CSVs into a summary table and SVG plots.
    Report(ReportArgs),
    /// Convert IDX digits into a directory of event-camera AER files.
    SynthNmnist(SynthArgs),
}

/// Options that override fields of the configuration file.
#[derive(Args, Debug, Clone, Default)]
pub struct RunOverrides {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub arm: Option<BaselineKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory holding the IDX files (else the config, then MEMTOPO_DATA).
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Directory of per-digit AER files to use instead of synthesizing events.
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "nmnist-classify")]
    task: Task,
    #[arg(long, default_value = "memristor-pruning")]
    arm: BaselineKind,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunOverrides,
    /// Output directory; defaults to the config's output_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    None,
    Softmax,
    Consistency,
}

#[derive(Args, Debug)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Data overrides; everything else comes from the checkpoint's config.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub ckpt: CheckpointArgs,
    #[arg(long, value_enum, default_value_t = PolicyArg::None)]
    pub policy: PolicyArg,
    /// beta1 for softmax, beta2 for consistency.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    #[arg(long)]
    pub alpha: Option<f32>,
    /// Read-noise scale of the crossbar reads.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f32,
    /// Seed of the evaluation randomness; defaults to the checkpoint's.
    #[arg(long)]
    pub eval_seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub ckpt: CheckpointArgs,
    /// Comma-separated stop thresholds.
    #[arg(
        long,
        value_delimiter = ',',
        conflicts_with = "noise_scales",
        required_unless_present = "noise_scales"
    )]
    pub thresholds: Vec<f32>,
    /// Comma-separated read-noise scales.
    #[arg(long, value_delimiter = ',')]
    pub noise_scales: Vec<f32>,
    /// Noise seeds per scale.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long)]
    pub alpha: Option<f32>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BaselinesArgs {
    #[command(flatten)]
    pub run: RunOverrides,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProgrammingNoiseArgs {
    #[command(flatten)]
    pub run: RunOverrides,
    /// Comma-separated programming-noise scales; defaults to the config's.
    #[arg(long, value_delimiter = ',')]
    pub scales: Vec<f32>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long, value_enum)]
    pub form: Option<FormArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormArg {
    Multiplicative,
    ConductanceMapped,
}

impl From<FormArg> for ProgrammingNoiseForm {
    fn from(f: FormArg) -> Self {
        match f {
            FormArg::Multiplicative => ProgrammingNoiseForm::Multiplicative,
            FormArg::ConductanceMapped => ProgrammingNoiseForm::ConductanceMapped,
        }
    }
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    pub ckpt: CheckpointArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Also cluster the features with k-means and print the ARI against
    /// the labels.
    #[arg(long)]
    pub clusters: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Result CSVs written by the other subcommands.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory with the IDX files (else MEMTOPO_DATA, then ./data).
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Convert only the first N images.
    #[arg(long)]
    pub limit: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Config(a) => {
            let cfg = memtopo_core::config::RunConfig::new(a.seed, a.task, a.arm);
            cfg.to_toml().map(|s| print!("{s}")).map_err(Into::into)
        }
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Baselines(a) => commands::baselines(&a),
        Command::ProgrammingNoise(a) => commands::programming_noise(&a),
        Command::ExportEmbeddings(a) => commands::export_embeddings(&a),
        Command::Report(a) => report::run(&a),
        Command::SynthNmnist(a) => commands::synth_nmnist(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
